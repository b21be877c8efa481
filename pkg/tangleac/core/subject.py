"""Subject-side client: fetch tokens from policy channels and run the two-phase access protocol."""
import base64
import collections
import json
import logging
import threading
from typing import Optional

import httpx
import numpy as np

from . import abe
from .errors import ChannelNotFound, EmptyOtp, MalformedCiphertext, PolicyNotSatisfied, TransportError
from .mam import ChannelRegistry, fetch_latest
from .owner import OWNER_POLICY, AccessRequest, Decision, OwnerService, access_endpoint, auth_endpoint
from .tangle import TangleStore
from .token import Token, save_token, token_parse

log = logging.getLogger(__name__)


class OwnerClientBase:
    """Base class for transports to the owner's wire API.

    Every request body sent is appended to ``sent`` so callers can inspect the exact bytes that left the subject.
    """

    def __init__(self):
        self.sent: list[bytes] = []
        self._lock = threading.Lock()

    def auth(self, policy: str) -> bytes:
        """Declare a policy and receive the encrypted OTP."""
        payload = self._send('/auth', {'policy': policy})
        try:
            return base64.b64decode(payload['otp_ct'], validate=True)
        except (KeyError, TypeError, ValueError) as e:
            raise TransportError('Unexpected auth response {!r}'.format(payload)) from e

    def access(self, request_ct: bytes) -> Decision:
        payload = self._send('/access', {'request_ct': base64.b64encode(request_ct).decode('ascii')})
        return Decision.from_wire(payload)

    def _send(self, path: str, body: dict) -> dict:
        content = json.dumps(body).encode('utf-8')
        with self._lock:
            self.sent.append(content)
        status, payload = self._post(path, content)
        if status != 200:
            raise TransportError('Owner answered {} {} to {}'.format(status, payload, path))
        return payload

    def _post(self, path: str, content: bytes) -> tuple[int, dict]:
        """Deliver a JSON body and return the status code and decoded response."""
        raise NotImplementedError


class HttpOwnerClient(OwnerClientBase):
    """Talks to ``owner serve`` over HTTP.

    Parameters
    ----------
    endpoint : str
        Base URL, e.g. ``'http://127.0.0.1:8080'``
    transport : httpx.BaseTransport, optional
        Custom transport, e.g. a mock in tests
    timeout : float
        Seconds before a request is abandoned
    http : httpx.Client, optional
        Preconfigured client to use instead of building one
    """

    def __init__(self, endpoint: str, transport: httpx.BaseTransport = None, timeout: float = 10.0,
                 http: httpx.Client = None):
        super().__init__()
        self.client = http or httpx.Client(base_url=endpoint, transport=transport, timeout=timeout)

    def _post(self, path, content):
        try:
            response = self.client.post(path, content=content, headers={'content-type': 'application/json'})
            return response.status_code, response.json()
        except (httpx.HTTPError, ValueError) as e:
            raise TransportError('Cannot reach owner at {}: {}'.format(self.client.base_url, e)) from e

    def close(self):
        self.client.close()


class InProcessOwnerClient(OwnerClientBase):
    """Calls an OwnerService in the same process through the same JSON handlers the HTTP API uses."""

    def __init__(self, owner: OwnerService):
        super().__init__()
        self.owner = owner
        self.handlers = {'/auth': auth_endpoint, '/access': access_endpoint}

    def _post(self, path, content):
        return self.handlers[path](self.owner, json.loads(content))


class Subject:
    """A subject holding an attribute key.

    Parameters
    ----------
    key : abe.SecretKey
        Key issued by the attribute authority
    pp : abe.PublicParams
    client : OwnerClientBase
        Transport to the owner
    registry : ChannelRegistry
        Channel roots and verification keys published by the owner
    store : TangleStore
        Tangle the owner publishes to
    rng : np.random.Generator, optional
        Randomness for request encryption
    token_dir : str, optional
        Directory decrypted tokens are written to
    """

    def __init__(self, key: abe.SecretKey, pp: abe.PublicParams, client: OwnerClientBase, registry: ChannelRegistry,
                 store: TangleStore, rng: np.random.Generator = None, token_dir: Optional[str] = None):
        self.key = key
        self.pp = pp
        self.client = client
        self.registry = registry
        self.store = store
        self.rng = rng if rng is not None else np.random.default_rng()
        self.token_dir = token_dir
        self.stats = collections.Counter()
        self._rng_lock = threading.Lock()

    def fetch_token(self, root_address: bytes) -> Token:
        """Read, decrypt and store the latest token of a policy channel.

        Raises
        ------
        ChannelNotFound
            If the root is not in the registry or nothing is published there
        PolicyNotSatisfied
            If the subject's attributes do not satisfy the channel's policy
        MalformedToken
            If the decrypted body is not a token
        """
        entry = self.registry.by_root(root_address)
        if entry is None:
            raise ChannelNotFound('Channel {} is not in the registry'.format(root_address.hex()))

        body, count = fetch_latest(self.store, entry.root, entry.verify_key)
        plaintext = abe.decrypt(self.key, abe.AbeCiphertext.from_bytes(body, self.pp.group))
        self.stats['fetches'] += 1
        self.stats['abe_decryptions'] += 1
        if plaintext is abe.NOT_SATISFIED:
            raise PolicyNotSatisfied('Key does not satisfy {!r}'.format(entry.policy))

        token = token_parse(plaintext)
        if self.token_dir:
            save_token(token, self.token_dir)
        log.debug('Fetched token {} (message {} of channel {})'.format(token.id, count, root_address.hex()))
        return token

    def authenticate(self, token: Token) -> str:
        """Declare the token's policy to the owner and decrypt the OTP it sends back.

        Raises
        ------
        PolicyNotSatisfied
            If the key cannot decrypt the OTP, i.e. the token was not issued to anyone holding these attributes
        """
        blob = self.client.auth(token.policy)
        try:
            plaintext = abe.decrypt(self.key, abe.AbeCiphertext.from_bytes(blob, self.pp.group))
        except MalformedCiphertext as e:
            raise TransportError('Owner sent an undecodable OTP: {}'.format(e)) from e
        self.stats['abe_decryptions'] += 1
        if plaintext is abe.NOT_SATISFIED:
            raise PolicyNotSatisfied('Cannot decrypt the OTP for {!r}'.format(token.policy))
        return plaintext.decode('ascii')

    def build_access_request(self, token: Token, resource: str, action: str, otp: str) -> bytes:
        """Access request encrypted so that only a key holding the owner attribute can read it."""
        if not otp:
            raise EmptyOtp('Access requests must carry an OTP')
        request = AccessRequest(resource=resource, action=action, token=token, otp=otp)
        with self._rng_lock:
            ct = abe.encrypt(self.pp, OWNER_POLICY, request.to_bytes(), self.rng)
        self.stats['abe_encryptions'] += 1
        return ct.to_bytes(self.pp.group)

    def request_access(self, token: Token, resource: str, action: str) -> Decision:
        """Authenticate, then submit an access request; returns the owner's decision unchanged."""
        otp = self.authenticate(token)
        decision = self.client.access(self.build_access_request(token, resource, action, otp))
        log.info('Access to {} {}: {} ({})'.format(action, resource, decision.outcome.value, decision.reason.value))
        return decision
