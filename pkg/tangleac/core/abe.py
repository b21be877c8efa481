"""Ciphertext-policy attribute-based encryption over an access tree.

The construction is the classic CP-ABE scheme with threshold access trees: a random secret ``s`` is shared down the
tree with one polynomial per gate, every leaf carries a pair of group elements bound to its attribute, and keys are
bound by a per-key randomizer ``r`` so that components of different keys cannot be combined. Decryption rebuilds
``e(g, g)^(r s)`` by Lagrange interpolation at the gates. The encapsulated element ``e(g, g)^(alpha s)`` keys an
AES-GCM body, so plaintexts of any length are supported.
"""
import dataclasses
import enum
import logging
import struct
from typing import Union

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import EmptyAttributeSet, EmptyPlaintext, KeyFileError, MalformedCiphertext, ParseError
from .groups import GroupBase, group_by_name
from .policy import Attribute, AttributeSet, Gate, Leaf, Policy, leaves, num_leaves, parse_policy, render_policy, \
    satisfies

log = logging.getLogger(__name__)

KEY_MAGIC = b'ABE1'
CIPHERTEXT_MAGIC = b'ABC1'
NONCE_SIZE = 12


class NotSatisfiedType(enum.Enum):
    NOT_SATISFIED = 'not satisfied'

    def __bool__(self):
        return False


NOT_SATISFIED = NotSatisfiedType.NOT_SATISFIED


@dataclasses.dataclass(frozen=True)
class PublicParams:
    group: GroupBase
    g: object
    h: object
    egg_alpha: object


@dataclasses.dataclass(frozen=True)
class MasterKey:
    group: GroupBase
    beta: int
    g_alpha: object


@dataclasses.dataclass(frozen=True)
class SecretKey:
    """Attribute key issued by the authority.

    Parameters
    ----------
    group : GroupBase
    attrs : AttributeSet
        Attributes the key was issued for
    d : object
        Base component ``g^((alpha + r) / beta)``
    components : dict
        Per-attribute pairs ``(g^r * H(j)^r_j, g^r_j)``
    """

    group: GroupBase
    attrs: AttributeSet
    d: object
    components: dict

    def __len__(self):
        return len(self.components) + 1


@dataclasses.dataclass(frozen=True)
class AbeCiphertext:
    """Hybrid CP-ABE ciphertext.

    Parameters
    ----------
    policy : str
        Canonical policy text, embedded in clear
    c : object
        ``h^s``
    leaf_components : tuple
        One ``(g^q_y(0), H(att(y))^q_y(0))`` pair per policy leaf, in depth-first order
    body : bytes
        AES-GCM nonce followed by the authenticated body ciphertext
    """

    policy: str
    c: object
    leaf_components: tuple
    body: bytes

    def to_bytes(self, group: GroupBase) -> bytes:
        """Wire form: ``ABC1`` || policy || component list || body."""
        components = [group.serialize_g(self.c)]
        for cy, cy_prime in self.leaf_components:
            components.extend((group.serialize_g(cy), group.serialize_g(cy_prime)))
        return CIPHERTEXT_MAGIC + _pack(self.policy.encode('utf-8')) + _pack_list(components) + _pack(self.body)

    @classmethod
    def from_bytes(cls, data: bytes, group: GroupBase) -> 'AbeCiphertext':
        try:
            if data[:4] != CIPHERTEXT_MAGIC:
                raise MalformedCiphertext('Bad ciphertext magic')
            offset = 4
            policy, offset = _unpack(data, offset)
            components, offset = _unpack_list(data, offset)
            body, offset = _unpack(data, offset)
            if offset != len(data) or len(components) % 2 != 1:
                raise MalformedCiphertext('Ciphertext has trailing bytes or an even component count')
            elements = [group.deserialize_g(c) for c in components]
            return cls(
                policy=policy.decode('utf-8'),
                c=elements[0],
                leaf_components=tuple(zip(elements[1::2], elements[2::2])),
                body=body,
            )
        except (struct.error, UnicodeDecodeError, KeyFileError) as e:
            raise MalformedCiphertext('Cannot decode ciphertext: {}'.format(e)) from e


def setup(group: GroupBase, rng: np.random.Generator) -> tuple[PublicParams, MasterKey]:
    """Generate public parameters and the master key.

    Returns
    -------
    tuple[PublicParams, MasterKey]
    """
    alpha = group.random_scalar(rng)
    beta = group.random_scalar(rng)
    g = group.generator()
    pp = PublicParams(group=group, g=g, h=group.exp(g, beta), egg_alpha=group.gt_exp(group.pair(g, g), alpha))
    mk = MasterKey(group=group, beta=beta, g_alpha=group.exp(g, alpha))
    return pp, mk


def keygen(mk: MasterKey, attrs: AttributeSet, rng: np.random.Generator) -> SecretKey:
    """Issue a secret key for a set of attributes."""
    attrs = AttributeSet(attrs)
    if not attrs:
        raise EmptyAttributeSet('Cannot issue a key without attributes')

    group = mk.group
    r = group.random_scalar(rng)
    g_r = group.g_pow(r)
    d = group.exp(group.mul(mk.g_alpha, g_r), pow(mk.beta, -1, group.order))

    components = {}
    for attr in sorted(attrs):
        r_j = group.random_scalar(rng)
        components[attr] = (
            group.mul(g_r, group.exp(_hash_attribute(group, attr), r_j)),
            group.g_pow(r_j),
        )
    return SecretKey(group=group, attrs=attrs, d=d, components=components)


def encrypt(pp: PublicParams, policy: Union[Policy, str], plaintext: bytes, rng: np.random.Generator) -> AbeCiphertext:
    """Encrypt a plaintext under an access tree.

    Parameters
    ----------
    pp : PublicParams
    policy : Policy or str
        Access tree, or policy text to parse
    plaintext : bytes
        Non-empty message
    rng : np.random.Generator
        Source of every random value, so equal seeds give equal ciphertexts

    Returns
    -------
    AbeCiphertext
    """
    if not plaintext:
        raise EmptyPlaintext('Refusing to encrypt an empty plaintext')
    if isinstance(policy, str):
        policy = parse_policy(policy)

    group = pp.group
    s = group.random_scalar(rng)
    shares = []
    _share(group, policy, s, rng, shares)

    leaf_components = tuple(
        (group.g_pow(q), group.exp(_hash_attribute(group, leaf.attribute), q))
        for leaf, q in zip(leaves(policy), shares)
    )

    policy_text = render_policy(policy)
    nonce = rng.bytes(NONCE_SIZE)
    key = _body_key(group, group.gt_exp(pp.egg_alpha, s))
    body = nonce + AESGCM(key).encrypt(nonce, plaintext, policy_text.encode('utf-8'))

    return AbeCiphertext(policy=policy_text, c=group.exp(pp.h, s), leaf_components=leaf_components, body=body)


def decrypt(sk: SecretKey, ct: AbeCiphertext) -> Union[bytes, NotSatisfiedType]:
    """Decrypt a ciphertext.

    Returns
    -------
    bytes or NOT_SATISFIED
        The plaintext, or NOT_SATISFIED when the key's attributes do not satisfy the embedded policy

    Raises
    ------
    MalformedCiphertext
        If the component count does not match the policy or the body fails authentication
    """
    try:
        policy = parse_policy(ct.policy)
    except ParseError as e:
        raise MalformedCiphertext('Embedded policy does not parse: {}'.format(e)) from e
    if len(ct.leaf_components) != num_leaves(policy):
        raise MalformedCiphertext('Ciphertext has {} leaf components for {} leaves'.format(
            len(ct.leaf_components), num_leaves(policy)))

    if not satisfies(policy, sk.attrs):
        return NOT_SATISFIED

    group = sk.group
    a = _decrypt_node(sk, policy, ct.leaf_components, 0)
    encapsulated = group.gt_mul(group.pair(ct.c, sk.d), group.gt_inv(a))

    nonce, sealed = ct.body[:NONCE_SIZE], ct.body[NONCE_SIZE:]
    try:
        return AESGCM(_body_key(group, encapsulated)).decrypt(nonce, sealed, ct.policy.encode('utf-8'))
    except (InvalidTag, ValueError) as e:
        raise MalformedCiphertext('Ciphertext body failed authentication') from e


def _share(group: GroupBase, node: Policy, secret: int, rng: np.random.Generator, out: list) -> None:
    """Share ``secret`` down the tree: each gate gets a random polynomial of degree k-1 with q(0) = secret."""
    if isinstance(node, Leaf):
        out.append(secret)
        return

    coefficients = [secret] + [group.random_scalar(rng) for _ in range(node.k - 1)]
    for index, child in enumerate(node.children, start=1):
        _share(group, child, _evaluate(coefficients, index, group.order), rng, out)


def _evaluate(coefficients: list[int], x: int, order: int) -> int:
    accum = 0
    for c in reversed(coefficients):
        accum = (accum * x + c) % order
    return accum


def _lagrange_at_zero(i: int, indices: list[int], order: int) -> int:
    value = 1
    for j in indices:
        if j != i:
            value = value * (-j) * pow(i - j, -1, order) % order
    return value


def _decrypt_node(sk: SecretKey, node: Policy, components: tuple, offset: int):
    group = sk.group
    if isinstance(node, Leaf):
        cy, cy_prime = components[offset]
        try:
            d_j, d_j_prime = sk.components[node.attribute]
        except KeyError as e:
            raise MalformedCiphertext('Key lists {} but has no component for it'.format(node.attribute)) from e
        return group.gt_mul(group.pair(d_j, cy), group.gt_inv(group.pair(d_j_prime, cy_prime)))

    selected = []
    child_offset = offset
    for index, child in enumerate(node.children, start=1):
        if len(selected) < node.k and satisfies(child, sk.attrs):
            selected.append((index, child, child_offset))
        child_offset += num_leaves(child)

    indices = [index for index, _, _ in selected]
    result = None
    for index, child, child_offset in selected:
        term = group.gt_exp(_decrypt_node(sk, child, components, child_offset),
                            _lagrange_at_zero(index, indices, group.order))
        result = term if result is None else group.gt_mul(result, term)
    return result


def _hash_attribute(group: GroupBase, attr: Attribute) -> object:
    return group.hash_to_g(str(attr).encode('utf-8'))


def _body_key(group: GroupBase, element) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=32, salt=None, info=b'abe-body').derive(group.serialize_gt(element))


# Key and parameter files

def _dump(kind: bytes, group: GroupBase, components: list[bytes]) -> bytes:
    return KEY_MAGIC + kind + _pack(group.name.encode('ascii')) + _pack_list(components)


def _load(data: bytes, kind: bytes, group: GroupBase) -> list[bytes]:
    try:
        if data[:4] != KEY_MAGIC or data[4:5] != kind:
            raise KeyFileError('Expected a {!r} key file'.format(kind.decode('ascii')))
        name, offset = _unpack(data, 5)
        if name.decode('ascii') != group.name:
            raise KeyFileError('Key file is for backend {!r}, not {!r}'.format(name.decode('ascii'), group.name))
        components, offset = _unpack_list(data, offset)
    except (struct.error, UnicodeDecodeError) as e:
        raise KeyFileError('Truncated key file: {}'.format(e)) from e
    if offset != len(data):
        raise KeyFileError('Key file has trailing bytes')
    return components


def dump_public_params(pp: PublicParams) -> bytes:
    group = pp.group
    return _dump(b'P', group, [group.serialize_g(pp.g), group.serialize_g(pp.h), group.serialize_gt(pp.egg_alpha)])


def load_public_params(data: bytes, group: GroupBase) -> PublicParams:
    g, h, egg_alpha = _expect(_load(data, b'P', group), 3)
    return PublicParams(group=group, g=group.deserialize_g(g), h=group.deserialize_g(h),
                        egg_alpha=group.deserialize_gt(egg_alpha))


def dump_master_key(mk: MasterKey) -> bytes:
    group = mk.group
    return _dump(b'M', group, [group.serialize_scalar(mk.beta), group.serialize_g(mk.g_alpha)])


def load_master_key(data: bytes, group: GroupBase) -> MasterKey:
    beta, g_alpha = _expect(_load(data, b'M', group), 2)
    return MasterKey(group=group, beta=group.deserialize_scalar(beta), g_alpha=group.deserialize_g(g_alpha))


def dump_secret_key(sk: SecretKey) -> bytes:
    group = sk.group
    components = [group.serialize_g(sk.d)]
    for attr in sorted(sk.components):
        d_j, d_j_prime = sk.components[attr]
        components.extend((str(attr).encode('utf-8'), group.serialize_g(d_j), group.serialize_g(d_j_prime)))
    return _dump(b'S', group, components)


def load_secret_key(data: bytes, group: GroupBase) -> SecretKey:
    components = _load(data, b'S', group)
    if len(components) % 3 != 1:
        raise KeyFileError('Secret key file has {} components'.format(len(components)))

    entries = {}
    for i in range(1, len(components), 3):
        attr = Attribute.parse(components[i].decode('utf-8'))
        entries[attr] = (group.deserialize_g(components[i + 1]), group.deserialize_g(components[i + 2]))
    return SecretKey(group=group, attrs=AttributeSet(entries), d=group.deserialize_g(components[0]),
                     components=entries)


def peek_backend(data: bytes) -> str:
    """Backend name recorded in a key or parameter file."""
    if data[:4] != KEY_MAGIC:
        raise KeyFileError('Not a key file')
    name, _ = _unpack(data, 5)
    return name.decode('ascii')


def load_group_for(data: bytes, curve: str = 'SS512') -> GroupBase:
    return group_by_name(peek_backend(data), curve)


def _expect(components: list[bytes], count: int) -> list[bytes]:
    if len(components) != count:
        raise KeyFileError('Expected {} components, found {}'.format(count, len(components)))
    return components


def _pack(data: bytes) -> bytes:
    return struct.pack('>I', len(data)) + data


def _unpack(data: bytes, offset: int) -> tuple[bytes, int]:
    (length,) = struct.unpack_from('>I', data, offset)
    offset += 4
    chunk = data[offset:offset + length]
    if len(chunk) != length:
        raise struct.error('length prefix {} runs past the end of the data'.format(length))
    return chunk, offset + length


def _pack_list(items: list[bytes]) -> bytes:
    return struct.pack('>I', len(items)) + b''.join(_pack(item) for item in items)


def _unpack_list(data: bytes, offset: int) -> tuple[list[bytes], int]:
    (count,) = struct.unpack_from('>I', data, offset)
    offset += 4
    items = []
    for _ in range(count):
        item, offset = _unpack(data, offset)
        items.append(item)
    return items, offset
