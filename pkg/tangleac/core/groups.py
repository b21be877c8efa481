"""Bilinear group backends for the CP-ABE engine.

All backends expose a symmetric pairing e: G x G -> GT over a prime-order group. Exponents are plain Python integers
reduced modulo the group order, so the ABE code never touches backend-specific scalar types.
"""
import hashlib
import logging

import numpy as np

from .config import AbeConfig
from .errors import ConfigError, KeyFileError

log = logging.getLogger(__name__)


class GroupBase:
    """Base class for all pairing group backends.

    Subclasses implement the group law of G and GT, the pairing, hashing to G, and fixed-width serialization.
    """

    name = 'base'
    order: int

    def generator(self):
        raise NotImplementedError

    def exp(self, a, x: int):
        """Return ``a ** x`` in G."""
        raise NotImplementedError

    def mul(self, a, b):
        """Return ``a * b`` in G."""
        raise NotImplementedError

    def hash_to_g(self, data: bytes):
        raise NotImplementedError

    def pair(self, a, b):
        raise NotImplementedError

    def gt_exp(self, a, x: int):
        raise NotImplementedError

    def gt_mul(self, a, b):
        raise NotImplementedError

    def gt_inv(self, a):
        raise NotImplementedError

    def serialize_g(self, a) -> bytes:
        raise NotImplementedError

    def deserialize_g(self, data: bytes):
        raise NotImplementedError

    def serialize_gt(self, a) -> bytes:
        raise NotImplementedError

    def deserialize_gt(self, data: bytes):
        raise NotImplementedError

    def random_scalar(self, rng: np.random.Generator) -> int:
        """Uniform non-zero exponent drawn from a seeded generator."""
        width = (self.order.bit_length() + 7) // 8 + 8
        return int.from_bytes(rng.bytes(width), 'big') % (self.order - 1) + 1

    def g_pow(self, x: int):
        return self.exp(self.generator(), x)

    def serialize_scalar(self, x: int) -> bytes:
        return (x % self.order).to_bytes((self.order.bit_length() + 7) // 8, 'big')

    def deserialize_scalar(self, data: bytes) -> int:
        return int.from_bytes(data, 'big') % self.order


class ToyGroup(GroupBase):
    """Additive model of a bilinear group over Z_q.

    G and GT are both (Z_q, +), ``g ** x`` is ``g * x mod q`` and ``e(a, b) = a * b mod q``. Bilinearity holds exactly,
    so every ABE identity can be checked quickly, but discrete logarithms are trivial: this backend is INSECURE and
    exists for tests and exhaustive sweeps only.
    """

    name = 'toy'

    # Mersenne prime 2**127 - 1
    order = 2**127 - 1

    def __init__(self):
        self._width = (self.order.bit_length() + 7) // 8

    def generator(self):
        return 1

    def exp(self, a, x):
        return a * x % self.order

    def mul(self, a, b):
        return (a + b) % self.order

    def hash_to_g(self, data):
        return int.from_bytes(hashlib.sha256(b'hash-to-g' + data).digest(), 'big') % self.order

    def pair(self, a, b):
        return a * b % self.order

    def gt_exp(self, a, x):
        return a * x % self.order

    def gt_mul(self, a, b):
        return (a + b) % self.order

    def gt_inv(self, a):
        return -a % self.order

    def serialize_g(self, a):
        return a.to_bytes(self._width, 'big')

    def deserialize_g(self, data):
        if len(data) != self._width:
            raise KeyFileError('Toy group elements are {} bytes, got {}'.format(self._width, len(data)))
        return int.from_bytes(data, 'big') % self.order

    def serialize_gt(self, a):
        return a.to_bytes(self._width, 'big')

    def deserialize_gt(self, data):
        return self.deserialize_g(data)


class CharmGroup(GroupBase):
    """Pairing group backed by charm-crypto on a symmetric (type A) curve.

    Parameters
    ----------
    curve : str
        charm curve name, e.g. 'SS512'
    """

    name = 'charm'

    def __init__(self, curve: str = 'SS512'):
        try:
            from charm.toolbox.pairinggroup import G1, GT, ZR, PairingGroup, pair
        except ImportError as e:
            raise ConfigError('abe.backend=charm needs charm-crypto installed') from e

        self.curve = curve
        self._group = PairingGroup(curve)
        self._G1, self._GT, self._ZR, self._pair = G1, GT, ZR, pair
        self.order = int(self._group.order())
        self._g = self._group.hash(b'tangleac-generator', G1)

    def generator(self):
        return self._g

    def _zr(self, x: int):
        return self._group.init(self._ZR, x % self.order)

    def exp(self, a, x):
        return a ** self._zr(x)

    def mul(self, a, b):
        return a * b

    def hash_to_g(self, data):
        return self._group.hash(data, self._G1)

    def pair(self, a, b):
        return self._pair(a, b)

    def gt_exp(self, a, x):
        return a ** self._zr(x)

    def gt_mul(self, a, b):
        return a * b

    def gt_inv(self, a):
        return a ** -1

    def serialize_g(self, a):
        return self._group.serialize(a)

    def deserialize_g(self, data):
        try:
            return self._group.deserialize(data)
        except Exception as e:
            raise KeyFileError('Cannot deserialize group element: {}'.format(e)) from e

    def serialize_gt(self, a):
        return self._group.serialize(a)

    def deserialize_gt(self, data):
        return self.deserialize_g(data)


def make_group(cfg: AbeConfig) -> GroupBase:
    """Instantiate the group backend named in the config."""
    if cfg.backend == 'toy':
        log.warning('Using the insecure toy group backend; do not use it outside of tests')
        return ToyGroup()
    return CharmGroup(cfg.curve)


def group_by_name(name: str, curve: str = 'SS512') -> GroupBase:
    if name == ToyGroup.name:
        return ToyGroup()
    if name == CharmGroup.name:
        return CharmGroup(curve)
    raise KeyFileError('Unknown group backend {!r}'.format(name))
