"""Monotone access-tree policies over "Name:Value" attributes.

Grammar (AND binds tighter than OR)::

    expr   := term ("OR" term)*
    term   := factor ("AND" factor)*
    factor := attribute | "(" expr ")" | INT "of" "(" expr ("," expr)+ ")"
"""
import dataclasses
import re
from typing import Iterable, Union

from .errors import ParseError


@dataclasses.dataclass(frozen=True, order=True)
class Attribute:
    """A single credential such as ``Role:Student``.

    Parameters
    ----------
    name : str
        Non-empty attribute name without colons
    value : str
        Non-empty attribute value
    """

    name: str
    value: str

    def __post_init__(self):
        name, value = self.name.strip(), self.value.strip()
        if not name or not value or ':' in name:
            raise ValueError('Invalid attribute {!r}:{!r}'.format(self.name, self.value))
        object.__setattr__(self, 'name', name)
        object.__setattr__(self, 'value', value)

    @classmethod
    def parse(cls, text: str) -> 'Attribute':
        name, sep, value = text.partition(':')
        if not sep:
            raise ValueError('Attribute must look like Name:Value, got {!r}'.format(text))
        return cls(name, value)

    def __str__(self):
        return '{}:{}'.format(self.name, self.value)


class AttributeSet(frozenset):
    """Set of attributes held by a secret key."""

    def __new__(cls, attrs: Iterable[Union[Attribute, str]] = ()):
        return super().__new__(cls, (a if isinstance(a, Attribute) else Attribute.parse(a) for a in attrs))

    def canonical(self) -> list[str]:
        return sorted(str(a) for a in self)

    def __repr__(self):
        return 'AttributeSet({})'.format(self.canonical())


@dataclasses.dataclass(frozen=True)
class Leaf:
    attribute: Attribute


@dataclasses.dataclass(frozen=True)
class Gate:
    """Threshold gate: satisfied when at least ``k`` of its children are. AND is k=n, OR is k=1."""

    k: int
    children: tuple

    def __post_init__(self):
        if not 1 <= self.k <= len(self.children):
            raise ValueError('Gate threshold {} out of range for {} children'.format(self.k, len(self.children)))

    @property
    def is_and(self) -> bool:
        return self.k == len(self.children)

    @property
    def is_or(self) -> bool:
        return self.k == 1 and len(self.children) > 1


Policy = Union[Leaf, Gate]

_TOKEN = re.compile(
    r'(?P<lparen>\()'
    r'|(?P<rparen>\))'
    r'|(?P<comma>,)'
    r'|(?P<attribute>[A-Za-z_][\w.\-]*\s*:\s*[\w.\-/]+)'
    r'|(?P<int>\d+)'
    r'|(?P<word>[A-Za-z_]\w*)'
)
_KEYWORDS = {'AND', 'OR', 'of'}
MAX_NESTING = 64


class _Parser:
    """Recursive-descent parser. A chain of one operator becomes a single gate; parenthesised groups stay nested."""

    def __init__(self, text: str):
        self.text = text
        self.tokens = self._tokenize(text)
        self.pos = 0
        self.nesting = 0

    def _tokenize(self, text: str) -> list[tuple[str, str, int]]:
        tokens = []
        i = 0
        while i < len(text):
            if text[i].isspace():
                i += 1
                continue
            match = _TOKEN.match(text, i)
            if match is None:
                raise ParseError('Unexpected character {!r}'.format(text[i]), _offset(text, i),
                                 frozenset({'attribute', '(', 'INT'}))
            kind = match.lastgroup
            value = match.group()
            if kind == 'word':
                if value not in _KEYWORDS:
                    raise ParseError('Unknown word {!r}'.format(value), _offset(text, i),
                                     frozenset({'attribute', 'AND', 'OR'}))
                kind = value
            tokens.append((kind, value, _offset(text, i)))
            i = match.end()
        tokens.append(('end', '', len(text.encode('utf-8'))))
        return tokens

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.pos]

    def expect(self, kinds: set) -> tuple[str, str, int]:
        token = self.peek()
        if token[0] not in kinds:
            found = token[1] or 'end of input'
            raise ParseError('Unexpected {!r}'.format(found), token[2], frozenset(kinds))
        self.pos += 1
        return token

    def parse(self) -> Policy:
        node = self.expr()
        self.expect({'end'})
        return node

    def expr(self) -> Policy:
        children = [self.term()]
        while self.peek()[0] == 'OR':
            self.pos += 1
            children.append(self.term())
        return children[0] if len(children) == 1 else Gate(1, tuple(children))

    def term(self) -> Policy:
        children = [self.factor()]
        while self.peek()[0] == 'AND':
            self.pos += 1
            children.append(self.factor())
        return children[0] if len(children) == 1 else Gate(len(children), tuple(children))

    def factor(self) -> Policy:
        kind, value, offset = self.expect({'attribute', 'lparen', 'int'})
        if kind == 'attribute':
            name, _, attr_value = value.partition(':')
            return Leaf(Attribute(name, attr_value))
        self._enter(offset)
        try:
            if kind == 'lparen':
                node = self.expr()
                self.expect({'rparen'})
                return node
            return self.threshold(value, offset)
        finally:
            self.nesting -= 1

    def threshold(self, value: str, offset: int) -> Gate:
        k = int(value)
        self.expect({'of'})
        self.expect({'lparen'})
        children = [self.expr()]
        self.expect({'comma'})
        children.append(self.expr())
        while self.peek()[0] == 'comma':
            self.pos += 1
            children.append(self.expr())
        self.expect({'rparen'})
        if not 1 <= k <= len(children):
            raise ParseError('Threshold {} out of range for {} children'.format(k, len(children)), offset,
                             frozenset({'INT'}))
        return Gate(k, tuple(children))

    def _enter(self, offset: int) -> None:
        self.nesting += 1
        if self.nesting > MAX_NESTING:
            raise ParseError('Policy nests deeper than {} levels'.format(MAX_NESTING), offset,
                             frozenset({'attribute'}))


def parse_policy(text: str) -> Policy:
    """Parse policy text into an access tree.

    Parameters
    ----------
    text : str
        Policy text, e.g. ``'Division:IS AND Role:Student'``

    Returns
    -------
    Policy
        Root of the access tree

    Raises
    ------
    ParseError
        With the byte offset and set of expected token kinds at the point of failure
    """
    return _Parser(text).parse()


def render_policy(policy: Policy) -> str:
    """Canonical text of a policy; ``parse_policy(render_policy(p)) == p``."""
    if isinstance(policy, Leaf):
        return str(policy.attribute)
    if policy.is_and or policy.is_or:
        joiner = ' AND ' if policy.is_and else ' OR '
        return joiner.join(_render_child(child) for child in policy.children)
    return '{} of ({})'.format(policy.k, ', '.join(render_policy(child) for child in policy.children))


def canonical_policy(text: str) -> str:
    return render_policy(parse_policy(text))


def _render_child(child: Policy) -> str:
    # Threshold gates are self-delimiting
    if isinstance(child, Gate) and (child.is_and or child.is_or):
        return '({})'.format(render_policy(child))
    return render_policy(child)


def satisfies(policy: Policy, attrs: AttributeSet) -> bool:
    """True iff the attribute set satisfies the access tree."""
    if isinstance(policy, Leaf):
        return policy.attribute in attrs
    return sum(satisfies(child, attrs) for child in policy.children) >= policy.k


def leaves(policy: Policy) -> list[Leaf]:
    """Leaves in depth-first, left-to-right order."""
    if isinstance(policy, Leaf):
        return [policy]
    return [leaf for child in policy.children for leaf in leaves(child)]


def num_leaves(policy: Policy) -> int:
    return len(leaves(policy))


def policy_attributes(policy: Policy) -> AttributeSet:
    return AttributeSet(leaf.attribute for leaf in leaves(policy))


def depth(policy: Policy) -> int:
    if isinstance(policy, Leaf):
        return 0
    return 1 + max(depth(child) for child in policy.children)


def _offset(text: str, index: int) -> int:
    return len(text[:index].encode('utf-8'))
