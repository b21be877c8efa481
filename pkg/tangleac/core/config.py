"""Classes to hold configuration details for the tangle, the ABE engine, the owner, subjects and benchmarks."""
import logging
import pathlib
from typing import Any, Optional

import yaml

from .errors import ConfigError

log = logging.getLogger(__name__)

DIGEST_BITS = 256


class PowConfig:
    """Proof-of-work and fragmentation settings of the tangle.

    Parameters
    ----------
    difficulty : int
        Required number of leading zero bits in every transaction id
    payload_capacity : int
        Maximum number of payload bytes carried by a single transaction
    nonce_start : int
        First candidate nonce tried by the PoW search. Fixing it makes the search reproducible.
    """

    def __init__(self, difficulty: int = 8, payload_capacity: int = 1024, nonce_start: int = 0):
        self.difficulty = _as_int('pow.difficulty', difficulty)
        self.payload_capacity = _as_int('pow.payload_capacity', payload_capacity)
        self.nonce_start = _as_int('pow.nonce_start', nonce_start)

        if self.difficulty < 0:
            raise ConfigError('pow.difficulty must be non-negative, got {}'.format(self.difficulty))
        if self.payload_capacity < 1:
            raise ConfigError('pow.payload_capacity must be at least 1, got {}'.format(self.payload_capacity))


class TangleConfig:
    """Tangle persistence settings.

    Parameters
    ----------
    log_path : str, optional
        Append-only transaction log. If None, the tangle lives only in memory.
    """

    def __init__(self, log_path: Optional[str] = None):
        self.log_path = log_path


class AbeConfig:
    """Settings of the CP-ABE engine.

    Parameters
    ----------
    backend : str
        Bilinear group backend, either 'charm' (pairing-friendly curve) or 'toy' (insecure, tests only)
    curve : str
        Curve name passed to the charm backend
    params_path : str, optional
        File holding the public parameters
    master_key_path : str, optional
        File holding the master key (attribute authority only)
    """

    backends = ('charm', 'toy')

    def __init__(self, backend: str = 'charm', curve: str = 'SS512', params_path: Optional[str] = None,
                 master_key_path: Optional[str] = None):
        if backend not in self.backends:
            raise ConfigError('abe.backend must be one of {}, got {!r}'.format(self.backends, backend))
        self.backend = backend
        self.curve = curve
        self.params_path = params_path
        self.master_key_path = master_key_path


class OwnerConfig:
    """Settings of the object-owner service.

    Parameters
    ----------
    seed : str, optional
        Hex-encoded 32-byte master seed from which per-policy channel seeds are derived
    issuer : str
        Issuer name written into every token
    otp_ttl_s : int
        Lifetime of an issued OTP in seconds
    listen_addr : str
        host:port the wire API listens on
    key_path : str, optional
        Owner's ABE secret key (must include Role:Owner)
    registry_path : str, optional
        Channel registry file published to subjects
    """

    def __init__(self, seed: Optional[str] = None, issuer: str = 'owner1', otp_ttl_s: int = 60,
                 listen_addr: str = '127.0.0.1:8080', key_path: Optional[str] = None,
                 registry_path: Optional[str] = None):
        self.seed = seed
        self.issuer = issuer
        self.otp_ttl_s = _as_int('owner.otp_ttl_s', otp_ttl_s)
        self.listen_addr = listen_addr
        self.key_path = key_path
        self.registry_path = registry_path

        if self.otp_ttl_s < 0:
            raise ConfigError('owner.otp_ttl_s must be non-negative, got {}'.format(self.otp_ttl_s))

    @property
    def host(self) -> str:
        return self.listen_addr.rsplit(':', 1)[0]

    @property
    def port(self) -> int:
        return _as_int('owner.listen_addr', self.listen_addr.rsplit(':', 1)[-1])


class SubjectConfig:
    """Settings of the subject client.

    Parameters
    ----------
    owner_endpoint : str
        Base URL of the owner's wire API
    registry_path : str, optional
        Channel registry file published by the owner
    key_path : str, optional
        Subject's ABE secret key
    token_dir : str
        Directory where decrypted tokens are stored
    """

    def __init__(self, owner_endpoint: str = 'http://127.0.0.1:8080', registry_path: Optional[str] = None,
                 key_path: Optional[str] = None, token_dir: str = 'tokens'):
        self.owner_endpoint = owner_endpoint
        self.registry_path = registry_path
        self.key_path = key_path
        self.token_dir = token_dir


class BenchConfig:
    """Settings of the benchmark harness.

    Parameters
    ----------
    difficulty : int
        PoW difficulty used by benchmark tangles
    seed : int
        Seed of every random generator used by a benchmark run
    parallel : bool
        Fan out independent subject fetches over a thread pool
    """

    def __init__(self, difficulty: int = 4, seed: int = 0, parallel: bool = False):
        self.difficulty = _as_int('bench.difficulty', difficulty)
        self.seed = _as_int('bench.seed', seed)
        self.parallel = bool(parallel)


class Config:
    """Top-level configuration, one section per concern.

    Parameters
    ----------
    pow : PowConfig
    tangle : TangleConfig
    abe : AbeConfig
    owner : OwnerConfig
    subject : SubjectConfig
    bench : BenchConfig
    """

    sections = {
        'pow': PowConfig,
        'tangle': TangleConfig,
        'abe': AbeConfig,
        'owner': OwnerConfig,
        'subject': SubjectConfig,
        'bench': BenchConfig,
    }

    def __init__(self, pow: PowConfig = None, tangle: TangleConfig = None, abe: AbeConfig = None,
                 owner: OwnerConfig = None, subject: SubjectConfig = None, bench: BenchConfig = None):
        self.pow = pow or PowConfig()
        self.tangle = tangle or TangleConfig()
        self.abe = abe or AbeConfig()
        self.owner = owner or OwnerConfig()
        self.subject = subject or SubjectConfig()
        self.bench = bench or BenchConfig()

    @classmethod
    def from_mapping(cls, data: dict) -> 'Config':
        """Build a config from a nested mapping and/or dotted keys.

        Parameters
        ----------
        data : dict
            Either ``{'pow': {'difficulty': 4}}`` or ``{'pow.difficulty': 4}``; both forms may be mixed.

        Returns
        -------
        Config
            Config with every unspecified value at its default
        """
        grouped: dict[str, dict[str, Any]] = {name: {} for name in cls.sections}
        for key, value in (data or {}).items():
            if isinstance(value, dict):
                for sub_key, sub_value in value.items():
                    _assign(grouped, '{}.{}'.format(key, sub_key), sub_value)
            else:
                _assign(grouped, key, value)

        try:
            return cls(**{name: section(**grouped[name]) for name, section in cls.sections.items()})
        except TypeError as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def from_file(cls, path: str, overrides: Optional[dict] = None) -> 'Config':
        """Load a YAML config file, then apply dotted-key overrides.

        Parameters
        ----------
        path : str
            YAML file with nested sections or dotted keys
        overrides : dict, optional
            Dotted keys that take precedence over the file

        Returns
        -------
        Config
        """
        file = pathlib.Path(path)
        log.info('Loading configuration from {}'.format(file))
        if not file.is_file():
            raise ConfigError('Config file not found: {}'.format(file))

        data = yaml.safe_load(file.read_text(encoding='utf-8')) or {}
        if not isinstance(data, dict):
            raise ConfigError('Config file must contain a mapping: {}'.format(file))

        flat = _flatten(data)
        flat.update(overrides or {})
        return cls.from_mapping(flat)

    def get(self, key: str) -> Any:
        """Read a value by dotted key, e.g. ``'pow.difficulty'``."""
        section, _, name = key.partition('.')
        if section not in self.sections or not name or not hasattr(getattr(self, section), name):
            raise ConfigError('Unknown config key: {}'.format(key))
        return getattr(getattr(self, section), name)


def parse_overrides(items: list[str]) -> dict[str, Any]:
    """Turn ``key=value`` strings from the command line into a dict, parsing values as YAML scalars."""
    overrides = {}
    for item in items or []:
        key, sep, value = item.partition('=')
        if not sep:
            raise ConfigError('Override must look like key=value, got {!r}'.format(item))
        overrides[key.strip()] = yaml.safe_load(value)
    return overrides


def _flatten(data: dict) -> dict[str, Any]:
    flat = {}
    for key, value in data.items():
        if isinstance(value, dict):
            for sub_key, sub_value in value.items():
                flat['{}.{}'.format(key, sub_key)] = sub_value
        else:
            flat[key] = value
    return flat


def _assign(grouped: dict, key: str, value: Any) -> None:
    section, _, name = key.partition('.')
    if section not in grouped or not name:
        raise ConfigError('Unknown config key: {}'.format(key))
    grouped[section][name] = value


def _as_int(key: str, value: Any) -> int:
    if isinstance(value, bool):
        raise ConfigError('{} must be an integer, got {!r}'.format(key, value))
    try:
        return int(value)
    except (TypeError, ValueError) as e:
        raise ConfigError('{} must be an integer, got {!r}'.format(key, value)) from e
