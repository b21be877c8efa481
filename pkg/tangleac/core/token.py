"""Capability tokens: the JSON access-right records published on owner channels."""
import dataclasses
import enum
import json
import logging
import pathlib
import uuid
from typing import Iterable

import numpy as np
import pydantic

from .errors import InvalidToken, MalformedToken, ParseError
from .policy import canonical_policy

log = logging.getLogger(__name__)


class TokenStatus(str, enum.Enum):
    ACTIVE = 'ACTIVE'
    INACTIVE = 'INACTIVE'


@dataclasses.dataclass(frozen=True)
class Right:
    """Actions a token holder may perform on one resource.

    Parameters
    ----------
    resource : str
        Resource path, e.g. ``'led1/power'``
    actions : tuple[str, ...]
        Allowed actions in issue order; duplicates are dropped
    """

    resource: str
    actions: tuple

    def __post_init__(self):
        if not isinstance(self.resource, str) or not self.resource:
            raise InvalidToken('Rights need a resource')
        if isinstance(self.actions, (str, bytes)):
            raise InvalidToken('Actions of {} must be a sequence of names, not one string'.format(self.resource))
        actions = tuple(dict.fromkeys(self.actions))
        if not actions or not all(isinstance(a, str) and a for a in actions):
            raise InvalidToken('Right on {} needs at least one non-empty action'.format(self.resource))
        object.__setattr__(self, 'actions', actions)

    def to_dict(self) -> dict:
        return {'resource': self.resource, 'actions': list(self.actions)}


@dataclasses.dataclass(frozen=True)
class Token:
    """Capability token.

    Parameters
    ----------
    id : str
        UUID assigned at issuance
    issuer : str
        Owner that issued the token
    address : str
        Hex root address of the channel the token is published on
    policy : str
        Policy the token is encrypted under, stored in canonical form
    status : TokenStatus
    rights : tuple[Right, ...]
        Order is significant for equality
    """

    id: str
    issuer: str
    address: str
    policy: str
    status: TokenStatus
    rights: tuple

    def __post_init__(self):
        if not self.id or not self.issuer:
            raise InvalidToken('Tokens need an id and an issuer')
        try:
            bytes.fromhex(self.address)
        except (TypeError, ValueError) as e:
            raise InvalidToken('Token address must be hex, got {!r}'.format(self.address)) from e
        try:
            object.__setattr__(self, 'policy', canonical_policy(self.policy))
        except ParseError as e:
            raise InvalidToken('Token policy does not parse: {}'.format(e)) from e
        try:
            object.__setattr__(self, 'status', TokenStatus(self.status))
        except ValueError as e:
            raise InvalidToken('Unknown token status {!r}'.format(self.status)) from e
        object.__setattr__(self, 'rights', tuple(self.rights))

    def to_dict(self) -> dict:
        return {
            'id': self.id,
            'issuer': self.issuer,
            'address': self.address,
            'policy': self.policy,
            'status': self.status.value,
            'rights': [r.to_dict() for r in self.rights],
        }


class RightSchema(pydantic.BaseModel):
    model_config = pydantic.ConfigDict(extra='forbid', strict=True)

    resource: str
    actions: list[str]


class _TokenSchema(pydantic.BaseModel):
    model_config = pydantic.ConfigDict(extra='forbid', strict=True)

    id: str
    issuer: str
    address: str
    policy: str
    status: str
    rights: list[RightSchema]


def canonical_dumps(data: dict) -> bytes:
    """Canonical JSON: sorted keys at every level, no insignificant whitespace, UTF-8."""
    return json.dumps(data, sort_keys=True, separators=(',', ':'), ensure_ascii=False).encode('utf-8')


def token_serialize(t: Token) -> bytes:
    """Canonical byte form of a token."""
    if not isinstance(t, Token) or not all(isinstance(r, Right) for r in t.rights):
        raise InvalidToken('Cannot serialize {!r}'.format(t))
    return canonical_dumps(t.to_dict())


def token_parse(b: bytes) -> Token:
    """Parse a serialized token; key order on input is irrelevant.

    Raises
    ------
    MalformedToken
        On a schema violation, an unknown status or an unparseable policy
    """
    try:
        schema = _TokenSchema.model_validate_json(b)
        return Token(
            id=schema.id,
            issuer=schema.issuer,
            address=schema.address,
            policy=schema.policy,
            status=schema.status,
            rights=tuple(Right(r.resource, tuple(r.actions)) for r in schema.rights),
        )
    except (pydantic.ValidationError, InvalidToken) as e:
        raise MalformedToken(str(e)) from e


def token_equals(a: Token, b: Token) -> bool:
    return token_serialize(a) == token_serialize(b)


def token_has_right(t: Token, resource: str, action: str) -> bool:
    """Exact resource match; no prefixes or wildcards."""
    return any(r.resource == resource and action in r.actions for r in t.rights)


def rights_from_mapping(rights: dict) -> tuple[Right, ...]:
    """Build rights from ``{resource: [action, ...]}``, keeping the mapping's order."""
    return tuple(Right(resource, tuple(actions)) for resource, actions in rights.items())


def random_uuid(rng: np.random.Generator) -> str:
    return str(uuid.UUID(bytes=rng.bytes(16), version=4))


def issue(issuer: str, address: str, policy: str, rights: Iterable[Right], rng: np.random.Generator,
          status: TokenStatus = TokenStatus.ACTIVE) -> Token:
    """Create a token with a fresh random id."""
    return Token(id=random_uuid(rng), issuer=issuer, address=address, policy=policy, status=status,
                 rights=tuple(rights))


def save_token(t: Token, directory: str) -> pathlib.Path:
    """Write a token to ``<directory>/<address>.json``, replacing any older token of the same channel."""
    path = pathlib.Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    file = path / '{}.json'.format(t.address)
    file.write_bytes(token_serialize(t))
    log.debug('Stored token {} in {}'.format(t.id, file))
    return file


def load_token(path: str) -> Token:
    return token_parse(pathlib.Path(path).read_bytes())
