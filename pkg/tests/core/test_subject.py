"""Tests for the subject-side client and the two-phase access protocol."""
import concurrent.futures
import dataclasses
import json

import httpx
import pytest

from tangleac.core import abe
from tangleac.core.errors import ChannelNotFound, EmptyOtp, PolicyNotSatisfied, TransportError
from tangleac.core.harness import STAFF_POLICY, STAFF_RIGHTS, STUDENT_POLICY, STUDENT_RIGHTS, STUDENT_RIGHTS_UPDATED
from tangleac.core.mam import fetch_message
from tangleac.core.owner import AccessRequest, Decision, Reason
from tangleac.core.subject import HttpOwnerClient, OwnerClientBase
from tangleac.core.token import load_token, token_serialize

from tests.fixtures.deployment import STAFF_ATTRS


def test_fetch_token(granted, student, tmp_path):
    _, roots = granted
    token = student.fetch_token(roots['student'])
    assert token.policy == STUDENT_POLICY
    assert token.rights == STUDENT_RIGHTS
    assert token.address == roots['student'].hex()
    assert load_token(str(tmp_path / 'student' / '{}.json'.format(token.address))) == token
    assert student.stats['fetches'] == 1


def test_fetch_token_of_other_policy(granted, student):
    _, roots = granted
    with pytest.raises(PolicyNotSatisfied):
        student.fetch_token(roots['staff'])


def test_fetch_token_unknown_root(granted, student):
    with pytest.raises(ChannelNotFound):
        student.fetch_token(bytes(32))


def test_fetch_after_update(granted, student):
    """Test that a refetch returns the updated rights and matches a direct walk of the channel."""
    deployment, roots = granted
    deployment.owner.update_access(STUDENT_POLICY, STUDENT_RIGHTS_UPDATED)
    token = student.fetch_token(roots['student'])
    assert [r.resource for r in token.rights] == ['led1/power', 'sensor1/temperature', 'sensor1/humidity']

    entry = deployment.registry.by_root(roots['student'])
    _, second = fetch_message(deployment.store, entry.root, entry.verify_key)
    body, _ = fetch_message(deployment.store, second, entry.verify_key)
    direct = abe.decrypt(student.key, abe.AbeCiphertext.from_bytes(body, deployment.group))
    assert direct == token_serialize(token)


def test_staff_gets_staff_rights(granted, staff):
    _, roots = granted
    token = staff.fetch_token(roots['staff'])
    assert token.rights == STAFF_RIGHTS
    assert staff.request_access(token, 'camera1/snapshot', 'GET').granted


def test_authenticate(granted, student):
    _, roots = granted
    otp = student.authenticate(student.fetch_token(roots['student']))
    assert len(otp) == 32
    assert student.client.sent == [json.dumps({'policy': STUDENT_POLICY}).encode()]


def test_stolen_token_is_useless(granted, student, staff):
    """Test that a staff member presenting a student token cannot read the OTP and never reaches /access."""
    _, roots = granted
    stolen = student.fetch_token(roots['student'])
    with pytest.raises(PolicyNotSatisfied):
        staff.request_access(stolen, 'led1/power', 'TURN_ON')
    assert len(staff.client.sent) == 1
    assert b'/access' not in staff.client.sent[0]
    assert b'request_ct' not in staff.client.sent[0]


def test_access_request_readable_only_by_owner(granted, student):
    deployment, roots = granted
    token = student.fetch_token(roots['student'])
    otp = student.authenticate(token)
    request = abe.AbeCiphertext.from_bytes(student.build_access_request(token, 'led1/power', 'TURN_ON', otp),
                                           deployment.group)
    assert request.policy == 'Role:Owner'
    assert abe.decrypt(student.key, request) is abe.NOT_SATISFIED
    plain = abe.decrypt(deployment.owner.key, request)
    assert AccessRequest.from_bytes(plain) == AccessRequest('led1/power', 'TURN_ON', token, otp)


def test_access_request_needs_otp(granted, student):
    _, roots = granted
    with pytest.raises(EmptyOtp):
        student.build_access_request(student.fetch_token(roots['student']), 'led1/power', 'TURN_ON', '')


def test_two_round_trips_per_access(granted, student):
    _, roots = granted
    token = student.fetch_token(roots['student'])
    assert student.request_access(token, 'led1/power', 'TURN_OFF').granted
    assert len(student.client.sent) == 2


def test_no_plaintext_on_the_wire(granted, student):
    """Test that neither the serialized token nor the OTP appears in anything the subject sends."""
    deployment, roots = granted
    token = student.fetch_token(roots['student'])
    captured = []
    original_auth = student.authenticate

    def authenticate(t):
        captured.append(original_auth(t))
        return captured[-1]

    student.authenticate = authenticate
    assert student.request_access(token, 'led1/power', 'TURN_ON').granted
    traffic = b''.join(student.client.sent)
    assert token_serialize(token) not in traffic
    assert token.id.encode() not in traffic
    assert captured[0].encode() not in traffic


def test_tampered_token_is_denied(granted, student):
    _, roots = granted
    token = student.fetch_token(roots['student'])
    forged = dataclasses.replace(token, rights=STAFF_RIGHTS)
    assert student.request_access(forged, 'camera1/snapshot', 'GET') == Decision.deny(Reason.TAMPERED_TOKEN)


def test_owner_down():
    """Test that an unreachable owner surfaces as a transport error."""
    def refuse(request):
        raise httpx.ConnectError('connection refused', request=request)

    client = HttpOwnerClient('http://owner.invalid', transport=httpx.MockTransport(refuse))
    with pytest.raises(TransportError):
        client.auth(STAFF_POLICY)
    assert len(client.sent) == 1


def test_owner_error_status():
    client = HttpOwnerClient('http://owner.invalid', transport=httpx.MockTransport(
        lambda request: httpx.Response(400, json={'error': 'parse'})))
    with pytest.raises(TransportError):
        client.auth('Role:Student AND')


def test_client_base_is_abstract():
    with pytest.raises(NotImplementedError):
        OwnerClientBase().auth(STAFF_POLICY)


def test_concurrent_requests(granted, tmp_path):
    """Test that many subjects can run the protocol against one owner at once."""
    deployment, roots = granted
    subjects = [deployment.subject(STAFF_ATTRS, token_dir=str(tmp_path / str(i))) for i in range(8)]
    tokens = [s.fetch_token(roots['staff']) for s in subjects]

    with concurrent.futures.ThreadPoolExecutor(max_workers=4) as pool:
        decisions = list(pool.map(lambda pair: pair[0].request_access(pair[1], 'led1/power', 'TURN_ON'),
                                  zip(subjects, tokens)))
    assert all(d.granted for d in decisions)
    assert deployment.owner.stats['grants'] == 8
    assert len(deployment.owner.otps) == 0
