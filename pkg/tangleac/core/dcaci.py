"""DCACI baseline: one plaintext token and one channel per subject, no encryption and no OTP phase."""
import collections
import dataclasses
import logging
import threading
from typing import Iterable, Union

import numpy as np
import pydantic
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import (AlreadyGranted, BadSignature, ChannelNotFound, CorruptBundle, InvalidToken, MalformedToken,
                     UnknownSubject)
from .mam import Channel, channel_open, fetch_latest, publish
from .owner import Decision, MockResources, Reason
from .tangle import TangleStore
from .token import Right, RightSchema, TokenStatus, canonical_dumps, random_uuid

log = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class DcaciToken:
    """Per-subject token: the capability token without a policy, bound to one subject instead."""

    id: str
    issuer: str
    address: str
    subject_id: str
    status: TokenStatus
    rights: tuple

    def __post_init__(self):
        if not self.id or not self.subject_id:
            raise InvalidToken('DCACI tokens need an id and a subject')
        object.__setattr__(self, 'status', TokenStatus(self.status))
        object.__setattr__(self, 'rights', tuple(self.rights))

    def to_bytes(self) -> bytes:
        return canonical_dumps({
            'id': self.id,
            'issuer': self.issuer,
            'address': self.address,
            'subject_id': self.subject_id,
            'status': self.status.value,
            'rights': [r.to_dict() for r in self.rights],
        })

    @classmethod
    def from_bytes(cls, data: bytes) -> 'DcaciToken':
        try:
            schema = _DcaciTokenSchema.model_validate_json(data)
            return cls(id=schema.id, issuer=schema.issuer, address=schema.address, subject_id=schema.subject_id,
                       status=schema.status, rights=tuple(Right(r.resource, tuple(r.actions)) for r in schema.rights))
        except (pydantic.ValidationError, InvalidToken, ValueError) as e:
            raise MalformedToken(str(e)) from e

    def has_right(self, resource: str, action: str) -> bool:
        return any(r.resource == resource and action in r.actions for r in self.rights)


class _DcaciTokenSchema(pydantic.BaseModel):
    model_config = pydantic.ConfigDict(extra='forbid', strict=True)

    id: str
    issuer: str
    address: str
    subject_id: str
    status: str
    rights: list[RightSchema]


class DcaciOwner:
    """Owner side of the baseline scheme.

    Parameters
    ----------
    store : TangleStore
    seed : bytes
        32-byte master seed; per-subject channel seeds are derived from it
    rng : np.random.Generator, optional
        Source of token ids
    issuer : str
    resources : MockResources, optional
    """

    def __init__(self, store: TangleStore, seed: bytes, rng: np.random.Generator = None, issuer: str = 'owner1',
                 resources: MockResources = None):
        self.store = store
        self.seed = seed
        self.rng = rng if rng is not None else np.random.default_rng()
        self.issuer = issuer
        self.resources = resources or MockResources()
        self.channels: dict[str, Channel] = {}
        self.tokens: dict[str, DcaciToken] = {}
        self.stats = collections.Counter()
        self._lock = threading.Lock()

    def grant(self, subject_id: str, rights: Iterable[Right]) -> DcaciToken:
        """Issue a token to one subject and publish it on a fresh channel for that subject."""
        rights = tuple(rights)
        with self._lock:
            if subject_id in self.channels:
                raise AlreadyGranted(subject_id)
            channel = channel_open(self._channel_seed(subject_id))
            token = DcaciToken(id=random_uuid(self.rng), issuer=self.issuer, address=channel.root.hex(),
                               subject_id=subject_id, status=TokenStatus.ACTIVE, rights=rights)
            self._publish(channel, token)
            self.channels[subject_id] = channel
            self.tokens[subject_id] = token
        log.debug('DCACI grant to {} on channel {}'.format(subject_id, channel.root.hex()))
        return token

    def update(self, subject_id: str, update: Union[Iterable[Right], TokenStatus]) -> bytes:
        """Append a new token for a subject; returns the message address."""
        with self._lock:
            channel = self.channels.get(subject_id)
            if channel is None:
                raise UnknownSubject(subject_id)
            current = self.tokens[subject_id]
            if update == TokenStatus.INACTIVE:
                rights, status = current.rights, TokenStatus.INACTIVE
            else:
                rights, status = tuple(update), TokenStatus.ACTIVE
            token = DcaciToken(id=random_uuid(self.rng), issuer=self.issuer, address=current.address,
                               subject_id=subject_id, status=status, rights=rights)
            address = self._publish(channel, token)
            self.tokens[subject_id] = token
        return address

    def get_access(self, subject_id: str, token: DcaciToken, resource: str, action: str) -> Decision:
        """Compare the presented token with the latest copy on the subject's channel and evaluate its rights."""
        self.stats['access_requests'] += 1
        channel = self.channels.get(subject_id)
        if channel is None:
            return Decision.deny(Reason.MALFORMED)
        try:
            body, _ = fetch_latest(self.store, channel.root, channel.verify_key)
            original = DcaciToken.from_bytes(body)
        except (BadSignature, CorruptBundle, ChannelNotFound, MalformedToken) as e:
            log.warning('Cannot read original DCACI token of {}: {}'.format(subject_id, e))
            return Decision.deny(Reason.MALFORMED)

        if token.to_bytes() != body:
            return Decision.deny(Reason.TAMPERED_TOKEN)
        if original.status != TokenStatus.ACTIVE:
            return Decision.deny(Reason.INACTIVE_TOKEN)
        if not original.has_right(resource, action):
            return Decision.deny(Reason.RIGHT_NOT_GRANTED)
        return Decision.grant(self.resources.read(resource, action))

    def _channel_seed(self, subject_id: str) -> bytes:
        info = b'subject-channel:' + subject_id.encode('utf-8')
        return HKDF(algorithm=hashes.SHA256(), length=32, salt=None, info=info).derive(self.seed)

    def _publish(self, channel: Channel, token: DcaciToken) -> bytes:
        self.stats['publishes'] += 1
        return publish(channel, token.to_bytes(), self.store)


def fetch_dcaci_token(store: TangleStore, root_address: bytes, verify_key: bytes) -> DcaciToken:
    """Subject side of the baseline: read the latest plaintext token of a channel."""
    body, _ = fetch_latest(store, root_address, verify_key)
    return DcaciToken.from_bytes(body)
