"""Object-owner service.

The owner publishes one CP-ABE encrypted token per policy on its own channel, answers authentication requests with
policy-bound one-time passwords, and evaluates encrypted access requests against the original tokens on the tangle.
"""
import base64
import binascii
import collections
import dataclasses
import enum
import logging
import threading
from typing import Callable, Iterable, Optional, Union

import numpy as np
import pydantic
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from . import abe
from .errors import (BadSignature, ChannelNotFound, CorruptBundle, InvalidToken, MalformedCiphertext, MalformedToken,
                     ParseError, PolicyExists, PolicyNotSatisfied, TransportError, UnknownPolicy)
from .mam import Channel, ChannelRegistry, RegistryEntry, channel_open, fetch_latest, publish
from .policy import canonical_policy, parse_policy, satisfies
from .tangle import TangleStore
from .token import Right, Token, TokenStatus, canonical_dumps, issue, token_equals, token_has_right, token_parse, \
    token_serialize

log = logging.getLogger(__name__)

OWNER_POLICY = 'Role:Owner'
OTP_SIZE = 16


class LogicalClock:
    """Settable clock in seconds for deterministic expiry."""

    def __init__(self, start: float = 0):
        self.now = start

    def __call__(self) -> float:
        return self.now

    def advance(self, seconds: float) -> float:
        self.now += seconds
        return self.now


@dataclasses.dataclass
class PolicyEntry:
    """State the owner keeps for one policy."""

    policy: str
    rights: tuple
    channel: Channel
    token: Token

    @property
    def root(self) -> bytes:
        return self.channel.root


class PolicyTable:
    """Policy string -> PolicyEntry, with one writer lock per policy."""

    def __init__(self):
        self.entries: dict[str, PolicyEntry] = {}
        self._locks: dict[str, threading.Lock] = collections.defaultdict(threading.Lock)
        self._guard = threading.Lock()

    def __len__(self):
        return len(self.entries)

    def __contains__(self, policy: str):
        return policy in self.entries

    def __iter__(self):
        return iter(list(self.entries.values()))

    def get(self, policy: str) -> Optional[PolicyEntry]:
        return self.entries.get(policy)

    def by_address(self, address_hex: str) -> Optional[PolicyEntry]:
        return next((e for e in list(self.entries.values()) if e.root.hex() == address_hex), None)

    def lock(self, policy: str) -> threading.Lock:
        with self._guard:
            return self._locks[policy]


@dataclasses.dataclass(frozen=True)
class OtpRecord:
    policy: str
    otp: str
    issued_at: float
    ttl: float

    def expired(self, now: float) -> bool:
        return now - self.issued_at > self.ttl


class OtpRegistry:
    """Outstanding policy-OTP pairs.

    Insertion and check-and-delete are atomic. Expired records are swept lazily whenever a new OTP is issued.

    Parameters
    ----------
    ttl : float
        Seconds an OTP stays valid after issuance
    """

    def __init__(self, ttl: float = 60):
        self.ttl = ttl
        self._records: dict[tuple[str, str], OtpRecord] = {}
        self._lock = threading.Lock()

    def __len__(self):
        with self._lock:
            return len(self._records)

    def outstanding(self, policy: str) -> list[OtpRecord]:
        with self._lock:
            return [r for (p, _), r in self._records.items() if p == policy]

    def issue(self, policy: str, otp: str, now: float) -> OtpRecord:
        record = OtpRecord(policy=policy, otp=otp, issued_at=now, ttl=self.ttl)
        with self._lock:
            self._sweep(now)
            self._records[(policy, otp)] = record
        return record

    def check(self, policy: str, otp: str, now: float) -> bool:
        """True iff the pair is outstanding and unexpired. A matching record is removed either way."""
        with self._lock:
            record = self._records.pop((policy, otp), None)
        return record is not None and not record.expired(now)

    def _sweep(self, now: float) -> None:
        for key in [k for k, r in self._records.items() if r.expired(now)]:
            del self._records[key]


class _AccessRequestSchema(pydantic.BaseModel):
    model_config = pydantic.ConfigDict(extra='forbid', strict=True)

    resource: str
    action: str
    token: dict
    otp: str


@dataclasses.dataclass(frozen=True)
class AccessRequest:
    """Plaintext access request, encrypted under the owner policy before it leaves the subject."""

    resource: str
    action: str
    token: Token
    otp: str

    def to_bytes(self) -> bytes:
        return canonical_dumps({'resource': self.resource, 'action': self.action, 'token': self.token.to_dict(),
                                'otp': self.otp})

    @classmethod
    def from_bytes(cls, data: bytes) -> 'AccessRequest':
        try:
            schema = _AccessRequestSchema.model_validate_json(data)
        except pydantic.ValidationError as e:
            raise MalformedToken('Bad access request: {}'.format(e)) from e
        if not schema.resource or not schema.action or not schema.otp:
            raise MalformedToken('Access requests need a resource, an action and an OTP')
        return cls(resource=schema.resource, action=schema.action, token=token_parse(canonical_dumps(schema.token)),
                   otp=schema.otp)


class Outcome(str, enum.Enum):
    GRANT = 'GRANT'
    DENY = 'DENY'


class Reason(str, enum.Enum):
    OK = 'OK'
    INVALID_OTP = 'INVALID_OTP'
    TAMPERED_TOKEN = 'TAMPERED_TOKEN'
    INACTIVE_TOKEN = 'INACTIVE_TOKEN'
    RIGHT_NOT_GRANTED = 'RIGHT_NOT_GRANTED'
    MALFORMED = 'MALFORMED'


@dataclasses.dataclass(frozen=True)
class Decision:
    """Result of evaluating an access request. GRANT carries the resource payload and always has reason OK."""

    outcome: Outcome
    reason: Reason
    resource_payload: Optional[bytes] = None

    def __post_init__(self):
        if (self.outcome == Outcome.GRANT) != (self.reason == Reason.OK):
            raise ValueError('GRANT must come with reason OK and DENY with anything else')

    @classmethod
    def grant(cls, payload: bytes) -> 'Decision':
        return cls(Outcome.GRANT, Reason.OK, payload)

    @classmethod
    def deny(cls, reason: Reason) -> 'Decision':
        return cls(Outcome.DENY, reason)

    @property
    def granted(self) -> bool:
        return self.outcome == Outcome.GRANT

    def to_wire(self) -> dict:
        if self.granted:
            return {'decision': Outcome.GRANT.value, 'payload': base64.b64encode(self.resource_payload).decode('ascii')}
        return {'decision': Outcome.DENY.value, 'reason': self.reason.value}

    @classmethod
    def from_wire(cls, data: dict) -> 'Decision':
        try:
            if data['decision'] == Outcome.GRANT.value:
                return cls.grant(base64.b64decode(data['payload'], validate=True))
            return cls.deny(Reason(data['reason']))
        except (KeyError, TypeError, ValueError) as e:
            raise TransportError('Unexpected decision {!r}'.format(data)) from e


class MockResources:
    """Canned device responses keyed by resource path."""

    defaults = {
        'sensor1/temperature': b'{"temperature_c":23.5}',
        'sensor1/humidity': b'{"humidity_pct":41}',
        'led1/power': b'{"led1":"ok"}',
        'camera1/snapshot': b'\xff\xd8\xff\xe0mock-jpeg\xff\xd9',
    }

    def __init__(self, payloads: Optional[dict[str, bytes]] = None):
        self.payloads = dict(self.defaults if payloads is None else payloads)

    def read(self, resource: str, action: str) -> bytes:
        if resource in self.payloads:
            return self.payloads[resource]
        return canonical_dumps({'resource': resource, 'action': action, 'status': 'ok'})


def derive_channel_seed(seed: bytes, policy: str) -> bytes:
    """Per-policy channel seed, so an owner can reopen its channels from its master seed alone."""
    info = b'policy-channel:' + policy.encode('utf-8')
    return HKDF(algorithm=hashes.SHA256(), length=32, salt=None, info=info).derive(seed)


class OwnerService:
    """The object owner.

    Parameters
    ----------
    pp : abe.PublicParams
        Public parameters of the attribute authority
    key : abe.SecretKey
        Owner key; holds Role:Owner plus every attribute needed to read back its own policies
    store : TangleStore
    seed : bytes
        32-byte owner master seed
    rng : np.random.Generator, optional
        Source of OTPs, token ids and encryption randomness
    clock : Callable[[], float], optional
        Seconds, used for OTP expiry
    registry : ChannelRegistry, optional
        Channel registry published to subjects
    issuer : str
    otp_ttl_s : float
    resources : MockResources, optional
    """

    def __init__(self, pp: abe.PublicParams, key: abe.SecretKey, store: TangleStore, seed: bytes,
                 rng: np.random.Generator = None, clock: Callable[[], float] = None,
                 registry: ChannelRegistry = None, issuer: str = 'owner1', otp_ttl_s: float = 60,
                 resources: MockResources = None):
        self.pp = pp
        self.key = key
        self.store = store
        self.seed = seed
        self.rng = rng if rng is not None else np.random.default_rng()
        self.clock = clock or LogicalClock()
        self.registry = registry if registry is not None else ChannelRegistry()
        self.issuer = issuer
        self.resources = resources or MockResources()

        self.table = PolicyTable()
        self.otps = OtpRegistry(otp_ttl_s)
        self.stats = collections.Counter()

        # numpy generators are not thread safe
        self._rng_lock = threading.Lock()
        self._stats_lock = threading.Lock()

        if not satisfies(parse_policy(OWNER_POLICY), key.attrs):
            log.warning('Owner key lacks {}; access requests cannot be decrypted'.format(OWNER_POLICY))

    @property
    def group(self):
        return self.pp.group

    def grant_access(self, policy_text: str, rights: Iterable[Right]) -> bytes:
        """Issue a token for a new policy and publish it as the first message of a fresh channel.

        Parameters
        ----------
        policy_text : str
        rights : Iterable[Right]
            Non-empty, in the order they will appear in the token

        Returns
        -------
        bytes
            Root address of the policy's channel
        """
        policy = canonical_policy(policy_text)
        rights = tuple(rights)
        if not rights:
            raise InvalidToken('A grant needs at least one right')

        with self.table.lock(policy):
            if policy in self.table:
                raise PolicyExists(policy)
            if not satisfies(parse_policy(policy), self.key.attrs):
                raise PolicyNotSatisfied('Owner key cannot read back tokens under {!r}'.format(policy))

            channel = channel_open(derive_channel_seed(self.seed, policy))
            with self._rng_lock:
                token = issue(self.issuer, channel.root.hex(), policy, rights, self.rng)
            self._publish(channel, token)

            if self.registry.by_policy(policy) is None:
                self.registry.add(RegistryEntry(policy=policy, root=channel.root, verify_key=channel.verify_key))
            self.table.entries[policy] = PolicyEntry(policy=policy, rights=rights, channel=channel, token=token)

        log.info('Granted {} right(s) under {!r} on channel {}'.format(len(rights), policy, channel.root.hex()))
        return channel.root

    def update_access(self, policy_text: str, update: Union[Iterable[Right], TokenStatus]) -> bytes:
        """Publish a fresh token as the next message of an existing policy channel.

        Parameters
        ----------
        policy_text : str
        update : Iterable[Right] or TokenStatus.INACTIVE
            New rights (token status ACTIVE), or INACTIVE to revoke the current rights

        Returns
        -------
        bytes
            Address of the new message
        """
        policy = canonical_policy(policy_text)
        with self.table.lock(policy):
            entry = self.table.get(policy)
            if entry is None:
                raise UnknownPolicy(policy)

            if update == TokenStatus.INACTIVE:
                rights, status = entry.rights, TokenStatus.INACTIVE
            else:
                rights, status = tuple(update), TokenStatus.ACTIVE
                if not rights:
                    raise InvalidToken('An update needs at least one right')

            with self._rng_lock:
                token = issue(self.issuer, entry.root.hex(), policy, rights, self.rng, status=status)
            address = self._publish(entry.channel, token)
            entry.rights, entry.token = rights, token

        log.info('Updated {!r} to status {} with {} right(s)'.format(policy, status.value, len(rights)))
        return address

    def handle_auth_request(self, policy_text: str) -> bytes:
        """Issue an OTP bound to a policy and return it encrypted under that policy."""
        policy = canonical_policy(policy_text)
        with self._rng_lock:
            otp = self.rng.bytes(OTP_SIZE).hex()
            ct = abe.encrypt(self.pp, policy, otp.encode('ascii'), self.rng)
        self.otps.issue(policy, otp, self.clock())
        self._count('auth_requests', 'abe_encryptions')
        log.debug('Issued OTP for {!r}'.format(policy))
        return ct.to_bytes(self.group)

    def check_otp(self, policy_text: str, otp: str) -> bool:
        try:
            policy = canonical_policy(policy_text)
        except ParseError:
            return False
        return self.otps.check(policy, otp, self.clock())

    def handle_access_request(self, encrypted_request: bytes) -> Decision:
        """Evaluate an encrypted access request. Never raises; every failure is a DENY decision."""
        self._count('access_requests')
        decision = self._evaluate(encrypted_request)
        self._count('grants' if decision.granted else 'denies')
        log.debug('Access decision {} ({})'.format(decision.outcome.value, decision.reason.value))
        return decision

    def read_original(self, entry: PolicyEntry) -> Token:
        """Fetch the latest token of a policy channel from the tangle and decrypt it with the owner key."""
        body, _ = fetch_latest(self.store, entry.root, entry.channel.verify_key)
        self._count('abe_decryptions')
        plaintext = abe.decrypt(self.key, abe.AbeCiphertext.from_bytes(body, self.group))
        if plaintext is abe.NOT_SATISFIED:
            raise PolicyNotSatisfied('Owner key cannot read {!r}'.format(entry.policy))
        return token_parse(plaintext)

    def restore(self) -> int:
        """Rebuild the policy table from the registry and the tangle after a restart.

        Returns
        -------
        int
            Number of policies restored
        """
        restored = 0
        for reg in self.registry:
            channel = Channel(derive_channel_seed(self.seed, reg.policy))
            if channel.root != reg.root:
                log.warning('Registry entry for {!r} was not created with this owner seed'.format(reg.policy))
                continue
            try:
                body, count = fetch_latest(self.store, channel.root, channel.verify_key)
            except ChannelNotFound:
                log.warning('Channel for {!r} has no messages on the tangle'.format(reg.policy))
                continue
            entry = PolicyEntry(policy=reg.policy, rights=(), channel=channel.resume(count), token=None)
            entry.token = self.read_original(entry)
            entry.rights = entry.token.rights
            self.table.entries[reg.policy] = entry
            restored += 1
        log.info('Restored {} polic(ies) from the registry'.format(restored))
        return restored

    def _count(self, *keys: str) -> None:
        with self._stats_lock:
            self.stats.update(keys)

    def _publish(self, channel: Channel, token: Token) -> bytes:
        with self._rng_lock:
            ct = abe.encrypt(self.pp, token.policy, token_serialize(token), self.rng)
        self._count('abe_encryptions', 'publishes')
        return publish(channel, ct.to_bytes(self.group), self.store)

    def _evaluate(self, encrypted_request: bytes) -> Decision:
        try:
            plaintext = abe.decrypt(self.key, abe.AbeCiphertext.from_bytes(encrypted_request, self.group))
            self._count('abe_decryptions')
            if plaintext is abe.NOT_SATISFIED:
                return Decision.deny(Reason.MALFORMED)
            request = AccessRequest.from_bytes(plaintext)
        except (MalformedCiphertext, MalformedToken) as e:
            log.debug('Rejecting undecodable access request: {}'.format(e))
            return Decision.deny(Reason.MALFORMED)

        presented = request.token
        if not self.check_otp(presented.policy, request.otp):
            return Decision.deny(Reason.INVALID_OTP)

        entry = self.table.by_address(presented.address)
        if entry is None:
            return Decision.deny(Reason.TAMPERED_TOKEN)
        try:
            original = self.read_original(entry)
        except (BadSignature, CorruptBundle, ChannelNotFound, MalformedCiphertext, MalformedToken,
                PolicyNotSatisfied) as e:
            log.warning('Cannot read original token of {!r}: {}'.format(entry.policy, e))
            return Decision.deny(Reason.MALFORMED)

        if not token_equals(presented, original):
            return Decision.deny(Reason.TAMPERED_TOKEN)
        if original.status != TokenStatus.ACTIVE:
            return Decision.deny(Reason.INACTIVE_TOKEN)
        if not token_has_right(original, request.resource, request.action):
            return Decision.deny(Reason.RIGHT_NOT_GRANTED)
        return Decision.grant(self.resources.read(request.resource, request.action))


class AuthBody(pydantic.BaseModel):
    policy: str


class AccessBody(pydantic.BaseModel):
    request_ct: str


def auth_endpoint(owner: OwnerService, body: dict) -> tuple[int, dict]:
    """``POST /auth``: returns the status code and JSON response body."""
    try:
        request = AuthBody.model_validate(body)
        ct = owner.handle_auth_request(request.policy)
    except (pydantic.ValidationError, ParseError) as e:
        log.debug('Rejecting auth request: {}'.format(e))
        return 400, {'error': 'parse'}
    return 200, {'otp_ct': base64.b64encode(ct).decode('ascii')}


def access_endpoint(owner: OwnerService, body: dict) -> tuple[int, dict]:
    """``POST /access``: always answers 200 with a decision."""
    try:
        request = AccessBody.model_validate(body)
        ct = base64.b64decode(request.request_ct, validate=True)
    except (pydantic.ValidationError, binascii.Error, ValueError) as e:
        log.debug('Rejecting access request body: {}'.format(e))
        return 200, Decision.deny(Reason.MALFORMED).to_wire()
    return 200, owner.handle_access_request(ct).to_wire()
