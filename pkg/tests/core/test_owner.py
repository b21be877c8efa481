"""Tests for the object-owner service."""
import concurrent.futures
import dataclasses

import numpy as np
import pytest

from tangleac.core import abe
from tangleac.core.errors import (InvalidToken, ParseError, PolicyExists, PolicyNotSatisfied, TransportError,
                                  UnknownPolicy)
from tangleac.core.harness import STAFF_POLICY, STUDENT_POLICY, STUDENT_RIGHTS, STUDENT_RIGHTS_UPDATED
from tangleac.core.mam import channel_open, fetch_latest
from tangleac.core.owner import (AccessRequest, Decision, MockResources, Outcome, OtpRegistry, OwnerService, Reason,
                                 access_endpoint, auth_endpoint, derive_channel_seed)
from tangleac.core.subject import InProcessOwnerClient
from tangleac.core.token import Right, TokenStatus, rights_from_mapping

from tests.fixtures.deployment import STUDENT_ATTRS


def test_grant_publishes_one_channel_per_policy(granted):
    deployment, roots = granted
    assert deployment.owner.stats['publishes'] == 2
    assert deployment.store.stats['bundles_attached'] == 2
    assert len(deployment.registry) == 2
    assert deployment.registry.by_policy(STUDENT_POLICY).root == roots['student']
    assert roots['student'] != roots['staff']
    assert deployment.owner.table.get(STUDENT_POLICY).token.address == roots['student'].hex()


def test_grant_rejects_existing_policy(granted):
    deployment, _ = granted
    with pytest.raises(PolicyExists):
        deployment.owner.grant_access('Division : IS AND Role:Student', STUDENT_RIGHTS)


def test_grant_validation(deployment):
    with pytest.raises(ParseError):
        deployment.owner.grant_access('Division:IS AND', STUDENT_RIGHTS)
    with pytest.raises(InvalidToken):
        deployment.owner.grant_access(STUDENT_POLICY, [])
    with pytest.raises(PolicyNotSatisfied):
        deployment.owner.grant_access('Role:Alien', STUDENT_RIGHTS)
    assert len(deployment.owner.table) == 0
    assert deployment.store.stats['bundles_attached'] == 0


def test_channel_seed_depends_on_policy():
    seed = bytes(32)
    assert derive_channel_seed(seed, STUDENT_POLICY) == derive_channel_seed(seed, STUDENT_POLICY)
    assert derive_channel_seed(seed, STUDENT_POLICY) != derive_channel_seed(seed, STAFF_POLICY)
    assert len(derive_channel_seed(seed, STUDENT_POLICY)) == 32


def test_update_appends_to_existing_channel(granted, student):
    """Test that an update becomes the second message of the policy channel and leaves other channels alone."""
    deployment, roots = granted
    staff_index = deployment.owner.table.get(STAFF_POLICY).channel.index
    deployment.owner.update_access(STUDENT_POLICY, STUDENT_RIGHTS_UPDATED)

    entry = deployment.registry.by_policy(STUDENT_POLICY)
    _, count = fetch_latest(deployment.store, entry.root, entry.verify_key)
    assert count == 2
    assert deployment.owner.table.get(STAFF_POLICY).channel.index == staff_index

    token = student.fetch_token(roots['student'])
    assert token.rights == STUDENT_RIGHTS_UPDATED
    assert token.status is TokenStatus.ACTIVE
    assert student.request_access(token, 'sensor1/temperature', 'GET').granted


def test_update_to_inactive_keeps_rights(granted, student):
    deployment, roots = granted
    deployment.owner.update_access(STUDENT_POLICY, TokenStatus.INACTIVE)
    token = student.fetch_token(roots['student'])
    assert token.status is TokenStatus.INACTIVE
    assert token.rights == STUDENT_RIGHTS
    assert student.request_access(token, 'led1/power', 'TURN_ON') == Decision.deny(Reason.INACTIVE_TOKEN)


def test_update_unknown_policy(granted):
    deployment, _ = granted
    with pytest.raises(UnknownPolicy):
        deployment.owner.update_access('Division:IS AND Role:Visitor', STUDENT_RIGHTS)


def test_auth_request_issues_fresh_otps(granted, student):
    """Test that each auth request yields a distinct 128-bit hex OTP readable only by satisfying keys."""
    deployment, roots = granted
    token = student.fetch_token(roots['student'])
    otps = {student.authenticate(token) for _ in range(5)}
    assert len(otps) == 5
    assert all(len(otp) == 32 and int(otp, 16) >= 0 for otp in otps)
    assert len(deployment.owner.otps.outstanding(STUDENT_POLICY)) == 5

    blob = deployment.owner.handle_auth_request(STAFF_POLICY)
    assert abe.decrypt(student.key, abe.AbeCiphertext.from_bytes(blob, deployment.group)) is abe.NOT_SATISFIED


def test_otp_is_single_use(granted, student):
    deployment, roots = granted
    otp = student.authenticate(student.fetch_token(roots['student']))
    assert deployment.owner.check_otp(STUDENT_POLICY, otp)
    assert not deployment.owner.check_otp(STUDENT_POLICY, otp)


def test_otp_is_bound_to_its_policy(granted, student):
    deployment, roots = granted
    otp = student.authenticate(student.fetch_token(roots['student']))
    assert not deployment.owner.check_otp(STAFF_POLICY, otp)
    assert not deployment.owner.check_otp('not a policy AND', otp)
    assert deployment.owner.check_otp('Division:IS AND Role: Student', otp)


def test_otp_expiry_boundary(granted, student):
    """Test that an OTP is accepted exactly ttl seconds after issue and rejected one second later."""
    deployment, roots = granted
    token = student.fetch_token(roots['student'])

    otp = student.authenticate(token)
    deployment.clock.advance(60)
    assert deployment.owner.check_otp(STUDENT_POLICY, otp)

    otp = student.authenticate(token)
    deployment.clock.advance(61)
    assert not deployment.owner.check_otp(STUDENT_POLICY, otp)
    assert len(deployment.owner.otps) == 0


def test_otp_registry_sweeps_on_issue():
    registry = OtpRegistry(ttl=10)
    registry.issue('Role:Student', 'a' * 32, now=0)
    registry.issue('Role:Student', 'b' * 32, now=5)
    assert len(registry) == 2
    registry.issue('Role:Staff', 'c' * 32, now=12)
    assert [r.otp for r in registry.outstanding('Role:Student')] == ['b' * 32]
    assert not registry.check('Role:Student', 'a' * 32, now=12)


def test_randomized_otp_checks(granted, student):
    """Test that issued OTPs pass exactly once and random guesses never pass."""
    deployment, roots = granted
    token = student.fetch_token(roots['student'])
    guess_rng = np.random.default_rng(11)
    for _ in range(50):
        otp = student.authenticate(token)
        assert not deployment.owner.check_otp(STUDENT_POLICY, guess_rng.bytes(16).hex())
        assert deployment.owner.check_otp(STUDENT_POLICY, otp)
        assert not deployment.owner.check_otp(STUDENT_POLICY, otp)


def test_access_granted(granted, student):
    deployment, roots = granted
    token = student.fetch_token(roots['student'])
    decision = student.request_access(token, 'led1/power', 'TURN_ON')
    assert decision == Decision.grant(MockResources.defaults['led1/power'])
    assert deployment.owner.stats['auth_requests'] == 1
    assert deployment.owner.stats['access_requests'] == 1
    assert deployment.owner.stats['grants'] == 1


def test_right_not_granted(granted, student):
    _, roots = granted
    token = student.fetch_token(roots['student'])
    assert student.request_access(token, 'camera1/snapshot', 'GET') == Decision.deny(Reason.RIGHT_NOT_GRANTED)
    assert student.request_access(token, 'led1/power', 'DIM') == Decision.deny(Reason.RIGHT_NOT_GRANTED)


def test_tampered_rights(granted, student):
    """Test that adding a right to a fetched token is caught by comparison with the original on the tangle."""
    deployment, roots = granted
    token = student.fetch_token(roots['student'])
    forged = dataclasses.replace(token, rights=token.rights + (Right('camera1/snapshot', ('GET',)),))
    assert student.request_access(forged, 'camera1/snapshot', 'GET') == Decision.deny(Reason.TAMPERED_TOKEN)
    assert deployment.owner.stats['denies'] == 1


def test_tampered_address(granted, student):
    _, roots = granted
    token = student.fetch_token(roots['student'])
    forged = dataclasses.replace(token, address='00' * 32)
    assert student.request_access(forged, 'led1/power', 'TURN_ON') == Decision.deny(Reason.TAMPERED_TOKEN)


def test_stale_token_after_update(granted, student):
    deployment, roots = granted
    token = student.fetch_token(roots['student'])
    deployment.owner.update_access(STUDENT_POLICY, STUDENT_RIGHTS_UPDATED)
    assert student.request_access(token, 'led1/power', 'TURN_ON') == Decision.deny(Reason.TAMPERED_TOKEN)


def test_stale_active_token_after_inactivation(granted, student):
    """Test that a token fetched before inactivation no longer matches the original and is reported as tampered."""
    deployment, roots = granted
    token = student.fetch_token(roots['student'])
    deployment.owner.update_access(STUDENT_POLICY, TokenStatus.INACTIVE)
    assert token.status is TokenStatus.ACTIVE
    assert student.request_access(token, 'led1/power', 'TURN_ON') == Decision.deny(Reason.TAMPERED_TOKEN)


def test_token_mutations_are_never_granted(granted, student):
    """Test that no single-field change to a genuine token gets a GRANT."""
    _, roots = granted
    token = student.fetch_token(roots['student'])
    mutations = [
        {'id': '00000000-0000-4000-8000-000000000000'},
        {'issuer': 'owner2'},
        {'status': TokenStatus.INACTIVE},
        {'rights': rights_from_mapping({'led1/power': ['TURN_OFF', 'TURN_ON']})},
        {'rights': rights_from_mapping({'led1/power': ['TURN_ON']})},
    ]
    for change in mutations:
        decision = student.request_access(dataclasses.replace(token, **change), 'led1/power', 'TURN_ON')
        assert decision.outcome is Outcome.DENY
        assert decision.reason is Reason.TAMPERED_TOKEN


def test_invalid_otp(granted, student):
    deployment, roots = granted
    token = student.fetch_token(roots['student'])
    request = student.build_access_request(token, 'led1/power', 'TURN_ON', '00' * 16)
    assert deployment.owner.handle_access_request(request) == Decision.deny(Reason.INVALID_OTP)


def test_replayed_request(granted, student):
    deployment, roots = granted
    token = student.fetch_token(roots['student'])
    otp = student.authenticate(token)
    request = student.build_access_request(token, 'led1/power', 'TURN_ON', otp)
    assert deployment.owner.handle_access_request(request).granted
    assert deployment.owner.handle_access_request(request) == Decision.deny(Reason.INVALID_OTP)


def test_expired_otp_is_denied(granted, student):
    deployment, roots = granted
    token = student.fetch_token(roots['student'])
    otp = student.authenticate(token)
    deployment.clock.advance(61)
    request = student.build_access_request(token, 'led1/power', 'TURN_ON', otp)
    assert deployment.owner.handle_access_request(request) == Decision.deny(Reason.INVALID_OTP)


@pytest.mark.parametrize('request_ct', [b'', b'garbage', b'ABC1' + bytes(40)])
def test_undecodable_request(granted, request_ct):
    deployment, _ = granted
    assert deployment.owner.handle_access_request(request_ct) == Decision.deny(Reason.MALFORMED)


def test_request_not_for_the_owner(granted, student):
    """Test that a request encrypted under a policy the owner key cannot satisfy is malformed."""
    deployment, roots = granted
    token = student.fetch_token(roots['student'])
    plain = AccessRequest('led1/power', 'TURN_ON', token, student.authenticate(token)).to_bytes()
    ct = abe.encrypt(deployment.pp, 'Role:Alien', plain, deployment.rng).to_bytes(deployment.group)
    assert deployment.owner.handle_access_request(ct) == Decision.deny(Reason.MALFORMED)


def test_deeply_nested_request_policy(granted):
    """Test that a request whose embedded policy nests thousands of levels deep is denied as malformed."""
    deployment, _ = granted
    genuine = abe.encrypt(deployment.pp, 'Role:Owner', b'{}', deployment.rng)
    nested = dataclasses.replace(genuine, policy='(' * 3000 + 'Role:Owner' + ')' * 3000)
    request_ct = nested.to_bytes(deployment.group)
    assert deployment.owner.handle_access_request(request_ct) == Decision.deny(Reason.MALFORMED)
    assert deployment.owner.stats['denies'] == 1


def test_request_body_is_not_a_request(granted):
    deployment, _ = granted
    ct = abe.encrypt(deployment.pp, 'Role:Owner', b'{"resource": "led1/power"}', deployment.rng)
    assert deployment.owner.handle_access_request(ct.to_bytes(deployment.group)) == Decision.deny(Reason.MALFORMED)


def test_forged_channel_message(granted, student):
    """Test that a forged message appended to a policy channel makes the original unreadable, not replaced."""
    deployment, roots = granted
    token = student.fetch_token(roots['student'])
    entry = deployment.owner.table.get(STUDENT_POLICY)
    forger = channel_open(bytes(32))
    deployment.store.attach(entry.channel.address(entry.channel.index),
                            forger.sign(b'forged', forger.address(1)).encode())
    assert student.request_access(token, 'led1/power', 'TURN_ON') == Decision.deny(Reason.MALFORMED)


def test_restore_from_registry(granted, student):
    """Test that a restarted owner rebuilds its table from the registry and the tangle."""
    deployment, roots = granted
    old = deployment.owner
    old.update_access(STUDENT_POLICY, STUDENT_RIGHTS_UPDATED)

    restarted = OwnerService(deployment.pp, old.key, deployment.store, old.seed, rng=np.random.default_rng(5),
                             clock=deployment.clock, registry=deployment.registry)
    assert restarted.restore() == 2
    assert restarted.table.get(STUDENT_POLICY).token == old.table.get(STUDENT_POLICY).token
    assert restarted.table.get(STUDENT_POLICY).channel.index == old.table.get(STUDENT_POLICY).channel.index

    student.client = InProcessOwnerClient(restarted)
    token = student.fetch_token(roots['student'])
    assert student.request_access(token, 'sensor1/humidity', 'GET').granted

    restarted.update_access(STUDENT_POLICY, TokenStatus.INACTIVE)
    assert student.fetch_token(roots['student']).status is TokenStatus.INACTIVE


def test_restore_skips_foreign_entries(granted):
    deployment, _ = granted
    stranger = OwnerService(deployment.pp, deployment.owner.key, deployment.store, bytes(32),
                            registry=deployment.registry)
    assert stranger.restore() == 0


def test_decision_invariants():
    with pytest.raises(ValueError):
        Decision(Outcome.GRANT, Reason.MALFORMED)
    with pytest.raises(ValueError):
        Decision(Outcome.DENY, Reason.OK)
    assert Decision.from_wire(Decision.grant(b'\x00\xff').to_wire()) == Decision.grant(b'\x00\xff')
    assert Decision.from_wire({'decision': 'DENY', 'reason': 'INVALID_OTP'}) == Decision.deny(Reason.INVALID_OTP)
    with pytest.raises(TransportError):
        Decision.from_wire({'decision': 'DENY', 'reason': 'BORED'})


def test_auth_endpoint(granted):
    deployment, _ = granted
    status, body = auth_endpoint(deployment.owner, {'policy': STUDENT_POLICY})
    assert status == 200
    assert 'otp_ct' in body
    assert auth_endpoint(deployment.owner, {'policy': 'Role:Student AND'}) == (400, {'error': 'parse'})
    assert auth_endpoint(deployment.owner, {}) == (400, {'error': 'parse'})


def test_access_endpoint_never_fails(granted):
    deployment, _ = granted
    for body in ({}, {'request_ct': '!!not base64!!'}, {'request_ct': 'Z2FyYmFnZQ=='}):
        assert access_endpoint(deployment.owner, body) == (200, {'decision': 'DENY', 'reason': 'MALFORMED'})


def test_owner_without_owner_attribute_warns(deployment, caplog):
    key = abe.keygen(deployment.mk, STUDENT_ATTRS, deployment.rng)
    OwnerService(deployment.pp, key, deployment.store, bytes(32))
    assert 'Role:Owner' in caplog.text


def test_stats_under_concurrent_requests(granted):
    """Test that counters stay exact when auth and access requests arrive from several threads."""
    deployment, _ = granted
    owner = deployment.owner
    before = owner.stats.copy()

    def work(i):
        owner.handle_auth_request(STUDENT_POLICY)
        return owner.handle_access_request(b'garbage %d' % i)

    with concurrent.futures.ThreadPoolExecutor(max_workers=8) as pool:
        decisions = list(pool.map(work, range(80)))

    assert all(d == Decision.deny(Reason.MALFORMED) for d in decisions)
    assert owner.stats['auth_requests'] - before['auth_requests'] == 80
    assert owner.stats['abe_encryptions'] - before['abe_encryptions'] == 80
    assert owner.stats['access_requests'] - before['access_requests'] == 80
    assert owner.stats['denies'] - before['denies'] == 80
