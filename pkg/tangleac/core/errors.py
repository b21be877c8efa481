"""Exceptions raised by tangleac."""


class TangleacError(Exception):
    """Base class for all tangleac errors."""


class ConfigError(TangleacError):
    """Invalid configuration key or value."""


# Tangle

class DifficultyUnreachable(TangleacError):
    """PoW difficulty exceeds the digest bit-length."""


class EmptyPayload(TangleacError):
    """Attempted to attach an empty payload."""


class CorruptBundle(TangleacError):
    """A bundle is missing fragments or one of its transactions fails verification."""


class UnknownTransaction(TangleacError):
    """Transaction id not present in the store."""


# MAM

class BadSeedLength(TangleacError):
    """Channel seeds must be exactly 32 bytes."""


class BadSignature(TangleacError):
    """A channel message signature does not verify under the expected key."""


class ChannelNotFound(TangleacError):
    """No message exists at the channel root address."""


# ABE

class ParseError(TangleacError):
    """Policy text could not be parsed.

    Parameters
    ----------
    message : str
        Human readable description
    offset : int
        Byte offset into the policy text where parsing failed
    expected : frozenset[str]
        Token kinds that would have been accepted at ``offset``
    """

    def __init__(self, message: str, offset: int, expected: frozenset = frozenset()):
        super().__init__('{} at offset {} (expected one of: {})'.format(
            message, offset, ', '.join(sorted(expected)) or 'nothing'))
        self.offset = offset
        self.expected = frozenset(expected)


class EmptyAttributeSet(TangleacError):
    """Secret keys need at least one attribute."""


class EmptyPlaintext(TangleacError):
    """Refusing to encrypt an empty plaintext."""


class MalformedCiphertext(TangleacError):
    """Ciphertext is structurally invalid or its body fails authentication."""


class KeyFileError(TangleacError):
    """A key or parameter file has a bad magic, kind, or backend."""


# Tokens

class InvalidToken(TangleacError):
    """Token violates one of its invariants."""


class MalformedToken(TangleacError):
    """Serialized token does not match the token schema."""


# Owner / subject

class PolicyExists(TangleacError):
    """A channel already exists for this policy; use update_access."""


class UnknownPolicy(TangleacError):
    """No channel exists for this policy."""


class PolicyNotSatisfied(TangleacError):
    """The subject's key does not satisfy the policy of a ciphertext it needs to read."""


class TransportError(TangleacError):
    """The owner could not be reached or answered with an unexpected response."""


class EmptyOtp(TangleacError):
    """Access requests must carry an OTP."""


# Baseline / harness

class AlreadyGranted(TangleacError):
    """The DCACI subject already holds a channel."""


class UnknownSubject(TangleacError):
    """The DCACI subject has never been granted access."""


class NonPositiveModel(TangleacError):
    """Cost model contains a value that is not strictly positive."""
