"""Masked Authenticated Messaging channels over the tangle (public mode).

A channel is a chain of signed messages. Message ``i`` lives at ``address(i)``, derived from the channel seed, and
embeds ``address(i + 1)`` so that readers can walk from the root to the latest message.
"""
import dataclasses
import enum
import hashlib
import logging
import pathlib
import struct
from typing import Optional, Union

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import BadSeedLength, BadSignature, ChannelNotFound, ConfigError
from .tangle import TangleStore

log = logging.getLogger(__name__)

SEED_SIZE = 32
ADDRESS_SIZE = 32


class NotFoundType(enum.Enum):
    NOT_FOUND = 'not found'

    def __bool__(self):
        return False


NOT_FOUND = NotFoundType.NOT_FOUND


@dataclasses.dataclass(frozen=True)
class MamMessage:
    """Signed channel message envelope.

    Parameters
    ----------
    body : bytes
        Message payload
    next_address : bytes
        Address of the following message in the channel
    signature : bytes
        Ed25519 signature over ``body || next_address``
    """

    body: bytes
    next_address: bytes
    signature: bytes

    def encode(self) -> bytes:
        """Length-prefixed binary envelope: body_len || body || next_address || sig_len || sig."""
        return b''.join((
            struct.pack('>I', len(self.body)),
            self.body,
            self.next_address,
            struct.pack('>I', len(self.signature)),
            self.signature,
        ))

    @classmethod
    def decode(cls, data: bytes) -> 'MamMessage':
        try:
            (body_len,) = struct.unpack_from('>I', data, 0)
            offset = 4
            body = data[offset:offset + body_len]
            offset += body_len
            next_address = data[offset:offset + ADDRESS_SIZE]
            offset += ADDRESS_SIZE
            (sig_len,) = struct.unpack_from('>I', data, offset)
            offset += 4
            signature = data[offset:offset + sig_len]
            offset += sig_len
        except struct.error as e:
            raise BadSignature('Truncated channel message: {}'.format(e)) from e

        if len(body) != body_len or len(next_address) != ADDRESS_SIZE or len(signature) != sig_len \
                or offset != len(data):
            raise BadSignature('Channel message envelope has inconsistent lengths')
        return cls(body=body, next_address=next_address, signature=signature)


class Channel:
    """Writer-side channel state. Only the holder of the seed can publish.

    Publishes on one channel must be serialized by the caller.

    Parameters
    ----------
    seed : bytes
        32-byte channel seed; never written to the tangle
    index : int
        Number of messages already published
    """

    def __init__(self, seed: bytes, index: int = 0):
        if len(seed) != SEED_SIZE:
            raise BadSeedLength('Channel seeds must be {} bytes, got {}'.format(SEED_SIZE, len(seed)))
        self._seed = bytes(seed)
        self.index = index

        derived = HKDF(algorithm=hashes.SHA256(), length=32, salt=None, info=b'mam-sign').derive(self._seed)
        self._signing_key = Ed25519PrivateKey.from_private_bytes(derived)
        self.verify_key = self._signing_key.public_key().public_bytes(
            encoding=serialization.Encoding.Raw, format=serialization.PublicFormat.Raw)

    def address(self, i: int) -> bytes:
        return hashlib.sha256(b'mam-addr' + self._seed + struct.pack('>Q', i)).digest()

    @property
    def root(self) -> bytes:
        return self.address(0)

    def sign(self, body: bytes, next_address: bytes) -> MamMessage:
        return MamMessage(body=body, next_address=next_address, signature=self._signing_key.sign(body + next_address))

    def resume(self, count: int) -> 'Channel':
        """Continue publishing after ``count`` messages that already exist on the tangle."""
        self.index = count
        return self

    def __repr__(self):
        return 'Channel(root={}, index={})'.format(self.root.hex(), self.index)


def channel_open(seed: bytes) -> Channel:
    """Open a channel at index 0 with keys derived from the seed."""
    return Channel(seed)


def publish(channel: Channel, body: bytes, store: TangleStore) -> bytes:
    """Attach the next message of a channel.

    Returns
    -------
    bytes
        Address the message was attached at
    """
    address = channel.address(channel.index)
    message = channel.sign(body, channel.address(channel.index + 1))
    store.attach(address, message.encode())
    channel.index += 1
    log.debug('Published message {} of channel {} ({} body bytes)'.format(channel.index, channel.root.hex(),
                                                                        len(body)))
    return address


def fetch_message(store: TangleStore, address: bytes,
                  verify_key: bytes) -> Union[tuple[bytes, bytes], NotFoundType]:
    """Read and authenticate the channel message stored at an address.

    Returns
    -------
    tuple[bytes, bytes] or NOT_FOUND
        ``(body, next_address)``, or NOT_FOUND when nothing is stored at the address
    """
    payloads = store.fetch_bundles(address)
    if not payloads:
        return NOT_FOUND

    public_key = _public_key(verify_key)
    for payload in payloads:
        try:
            message = MamMessage.decode(payload)
            public_key.verify(message.signature, message.body + message.next_address)
        except (BadSignature, InvalidSignature):
            continue
        return message.body, message.next_address

    raise BadSignature('No message at {} verifies under key {}'.format(address.hex(), verify_key.hex()))


def fetch_latest(store: TangleStore, root_address: bytes, verify_key: bytes) -> tuple[bytes, int]:
    """Walk a channel from its root to its last message.

    Returns
    -------
    tuple[bytes, int]
        Body of the last message and the number of messages traversed
    """
    result = fetch_message(store, root_address, verify_key)
    if result is NOT_FOUND:
        raise ChannelNotFound('Nothing published at {}'.format(root_address.hex()))

    count = 1
    body, next_address = result
    while True:
        result = fetch_message(store, next_address, verify_key)
        if result is NOT_FOUND:
            return body, count
        body, next_address = result
        count += 1


def _public_key(verify_key: bytes) -> Ed25519PublicKey:
    try:
        return Ed25519PublicKey.from_public_bytes(verify_key)
    except ValueError as e:
        raise BadSignature('Invalid verification key: {}'.format(e)) from e


@dataclasses.dataclass(frozen=True)
class RegistryEntry:
    policy: str
    root: bytes
    verify_key: bytes


class ChannelRegistry:
    """Out-of-band list of published channels, one line per policy.

    Each line reads ``policy <TAB> root_address_hex <TAB> verify_key_hex``.

    Parameters
    ----------
    path : str, optional
        Registry file. If None the registry is kept in memory only.
    """

    def __init__(self, path: Optional[str] = None):
        self.path = pathlib.Path(path) if path else None
        self.entries: list[RegistryEntry] = []
        if self.path is not None and self.path.exists():
            self.entries = self._read(self.path)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def add(self, entry: RegistryEntry) -> None:
        self.entries.append(entry)
        if self.path is not None:
            with open(self.path, 'a', encoding='utf-8') as f:
                f.write('{}\t{}\t{}\n'.format(entry.policy, entry.root.hex(), entry.verify_key.hex()))

    def by_policy(self, policy: str) -> Optional[RegistryEntry]:
        return next((e for e in self.entries if e.policy == policy), None)

    def by_root(self, root: bytes) -> Optional[RegistryEntry]:
        return next((e for e in self.entries if e.root == root), None)

    @staticmethod
    def _read(path: pathlib.Path) -> list[RegistryEntry]:
        entries = []
        with open(path, 'r', encoding='utf-8') as f:
            for number, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                fields = line.rstrip('\n').split('\t')
                if len(fields) != 3:
                    raise ConfigError('Registry line {} of {} is malformed'.format(number, path))
                policy, root, verify_key = fields
                entries.append(RegistryEntry(policy=policy, root=bytes.fromhex(root),
                                             verify_key=bytes.fromhex(verify_key)))
        return entries
