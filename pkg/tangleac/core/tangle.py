"""In-memory simulator of the IOTA Tangle.

Transactions form a DAG: each new transaction approves two tips and is sealed by a proof-of-work nonce.
Payloads larger than the per-transaction capacity are fragmented into bundles that share an address.
"""
import base64
import collections
import dataclasses
import hashlib
import json
import logging
import math
import pathlib
import struct
import threading
import time
from typing import Callable, Optional

import networkx as nx
import numpy as np

from .config import DIGEST_BITS, PowConfig
from .errors import CorruptBundle, DifficultyUnreachable, EmptyPayload, UnknownTransaction

log = logging.getLogger(__name__)

GENESIS = bytes(32)
NONCE_SIZE = 8


@dataclasses.dataclass(frozen=True)
class Transaction:
    """A single PoW-sealed tangle transaction.

    Parameters
    ----------
    id : bytes
        32-byte digest of every other field
    address : bytes
        32-byte routing key
    payload : bytes
        At most ``payload_capacity`` bytes of the bundle payload
    fragment_index : int
        Position of this fragment within its bundle
    fragment_total : int
        Number of fragments in the bundle
    trunk : bytes
        Id of the first approved transaction
    branch : bytes
        Id of the second approved transaction
    nonce : bytes
        8-byte PoW nonce
    timestamp : int
        Milliseconds since epoch, or a logical clock value
    """

    id: bytes
    address: bytes
    payload: bytes
    fragment_index: int
    fragment_total: int
    trunk: bytes
    branch: bytes
    nonce: bytes
    timestamp: int

    def digest(self) -> bytes:
        """Recompute the id from the other fields."""
        return transaction_digest(self.address, self.payload, self.fragment_index, self.fragment_total,
                                  self.trunk, self.branch, self.nonce, self.timestamp)

    def to_record(self) -> dict:
        """Log record of this transaction."""
        return {
            'id': self.id.hex(),
            'address': self.address.hex(),
            'payload': base64.b64encode(self.payload).decode('ascii'),
            'fi': self.fragment_index,
            'ft': self.fragment_total,
            'trunk': self.trunk.hex(),
            'branch': self.branch.hex(),
            'nonce': self.nonce.hex(),
            'ts': self.timestamp,
        }

    @classmethod
    def from_record(cls, record: dict) -> 'Transaction':
        try:
            return cls(
                id=bytes.fromhex(record['id']),
                address=bytes.fromhex(record['address']),
                payload=base64.b64decode(record['payload']),
                fragment_index=int(record['fi']),
                fragment_total=int(record['ft']),
                trunk=bytes.fromhex(record['trunk']),
                branch=bytes.fromhex(record['branch']),
                nonce=bytes.fromhex(record['nonce']),
                timestamp=int(record['ts']),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise CorruptBundle('Bad transaction record: {}'.format(e)) from e


@dataclasses.dataclass(frozen=True)
class Bundle:
    """Ordered fragments of one payload stored under one address."""

    address: bytes
    transactions: tuple[Transaction, ...]

    def __len__(self):
        return len(self.transactions)


def transaction_digest(address: bytes, payload: bytes, fragment_index: int, fragment_total: int, trunk: bytes,
                       branch: bytes, nonce: bytes, timestamp: int) -> bytes:
    """SHA-256 over the length-prefixed concatenation of the transaction fields."""
    h = hashlib.sha256()
    for field in (address, payload, _u64(fragment_index), _u64(fragment_total), trunk, branch, nonce,
                  _u64(timestamp)):
        h.update(struct.pack('>I', len(field)))
        h.update(field)
    return h.digest()


def leading_zero_bits(digest: bytes) -> int:
    value = int.from_bytes(digest, 'big')
    return len(digest) * 8 - value.bit_length()


@dataclasses.dataclass(frozen=True)
class TransactionDraft:
    """A transaction with every field but its nonce (and therefore its id)."""

    address: bytes
    payload: bytes
    fragment_index: int
    fragment_total: int
    trunk: bytes
    branch: bytes
    timestamp: int

    def digest(self, nonce: bytes) -> bytes:
        return transaction_digest(self.address, self.payload, self.fragment_index, self.fragment_total, self.trunk,
                                  self.branch, nonce, self.timestamp)

    def seal(self, nonce: bytes) -> Transaction:
        return Transaction(id=self.digest(nonce), nonce=nonce, **dataclasses.asdict(self))


def pow_search(draft: TransactionDraft, cfg: PowConfig) -> bytes:
    """Find a nonce that gives the draft's digest at least ``cfg.difficulty`` leading zero bits.

    Candidates are tried in counter order starting at ``cfg.nonce_start``, so the search is deterministic.

    Returns
    -------
    bytes
        The 8-byte nonce
    """
    if cfg.difficulty > DIGEST_BITS:
        raise DifficultyUnreachable('Difficulty {} exceeds the {}-bit digest'.format(cfg.difficulty, DIGEST_BITS))

    counter = cfg.nonce_start
    while True:
        nonce = _u64(counter % 2**64)
        if leading_zero_bits(draft.digest(nonce)) >= cfg.difficulty:
            return nonce
        counter += 1


class TangleStore:
    """DAG of transactions, its tip set, and an address index of bundles.

    Attaches are linearizable: tip selection and insertion of a whole bundle happen under one lock.

    Parameters
    ----------
    cfg : PowConfig
        PoW difficulty and payload capacity
    rng : np.random.Generator, optional
        Randomness for tip selection
    clock : Callable[[], int], optional
        Timestamp source in milliseconds; defaults to wall-clock time
    log_path : str, optional
        Append-only transaction log
    """

    def __init__(self, cfg: PowConfig, rng: np.random.Generator = None, clock: Callable[[], int] = None,
                 log_path: Optional[str] = None):
        self.cfg = cfg
        self.rng = rng if rng is not None else np.random.default_rng()
        self.clock = clock or (lambda: int(time.time() * 1000))
        self.log_path = pathlib.Path(log_path) if log_path else None

        self.genesis = GENESIS
        self.transactions: dict[bytes, Transaction] = {}
        self.tips: set[bytes] = set()
        self.address_index: dict[bytes, list[Bundle]] = {}
        self.approvers: dict[bytes, set[bytes]] = collections.defaultdict(set)
        self.stats = collections.Counter()

        self._lock = threading.RLock()

    def __len__(self):
        return len(self.transactions)

    def tip_select(self) -> tuple[bytes, bytes]:
        """Pick two tips uniformly at random, with replacement.

        Returns
        -------
        tuple[bytes, bytes]
            Trunk and branch ids; both are the genesis marker while no transaction exists
        """
        with self._lock:
            if not self.tips:
                return self.genesis, self.genesis

            # Sorted so that a seeded generator picks the same tips in every process
            candidates = sorted(self.tips)
            i, j = self.rng.integers(len(candidates), size=2)
            return candidates[i], candidates[j]

    def attach(self, address: bytes, payload: bytes) -> Bundle:
        """Fragment a payload into PoW-sealed transactions and attach them as one bundle.

        Parameters
        ----------
        address : bytes
            32-byte address the bundle is stored under
        payload : bytes
            Non-empty payload

        Returns
        -------
        Bundle
            The attached bundle
        """
        if not payload:
            raise EmptyPayload('Cannot attach an empty payload to {}'.format(address.hex()))

        capacity = self.cfg.payload_capacity
        total = math.ceil(len(payload) / capacity)

        with self._lock:
            transactions = []
            for index in range(total):
                fragment = payload[index * capacity:(index + 1) * capacity]
                trunk, branch = self.tip_select()
                draft = TransactionDraft(
                    address=address,
                    payload=fragment,
                    fragment_index=index,
                    fragment_total=total,
                    trunk=trunk,
                    branch=branch,
                    timestamp=self.clock(),
                )
                tx = draft.seal(pow_search(draft, self.cfg))
                self._insert(tx)
                transactions.append(tx)

            bundle = Bundle(address=address, transactions=tuple(transactions))
            self.address_index.setdefault(address, []).append(bundle)
            self.stats['bundles_attached'] += 1
            self.stats['transactions_attached'] += total
            self._append_log(transactions)

        log.debug('Attached bundle of {} transaction(s) at {}'.format(total, address.hex()))
        return bundle

    def fetch_bundles(self, address: bytes) -> list[bytes]:
        """Reassembled payloads stored under an address, in insertion order.

        Every member transaction is re-verified; an unknown address yields an empty list.
        """
        with self._lock:
            bundles = list(self.address_index.get(address, ()))
            self.stats['bundle_fetches'] += 1

        return [self._reassemble(bundle) for bundle in bundles]

    def verify_transaction(self, tx_id: bytes) -> bool:
        """Check a stored transaction's digest, PoW and approvals.

        Returns
        -------
        bool
            True iff the stored id matches the digest of its fields, the digest meets the difficulty, and
            trunk and branch resolve
        """
        with self._lock:
            if tx_id not in self.transactions:
                raise UnknownTransaction(tx_id.hex())
            tx = self.transactions[tx_id]
            resolves = all(ref == self.genesis or ref in self.transactions for ref in (tx.trunk, tx.branch))

        digest = tx.digest()
        return (
            tx.id == tx_id
            and digest == tx.id
            and leading_zero_bits(digest) >= self.cfg.difficulty
            and 0 <= tx.fragment_index < tx.fragment_total
            and len(tx.payload) <= self.cfg.payload_capacity
            and resolves
        )

    def approval_graph(self) -> nx.DiGraph:
        """Approval DAG with an edge from every transaction to its trunk and branch."""
        graph = nx.DiGraph()
        graph.add_node(self.genesis)
        with self._lock:
            for tx in self.transactions.values():
                graph.add_edge(tx.id, tx.trunk)
                graph.add_edge(tx.id, tx.branch)
        return graph

    @classmethod
    def replay(cls, log_path: str, cfg: PowConfig, rng: np.random.Generator = None,
               clock: Callable[[], int] = None) -> 'TangleStore':
        """Rebuild a store from its transaction log and keep appending to the same log.

        Parameters
        ----------
        log_path : str
            Path of the log; a missing file gives an empty store
        cfg : PowConfig
            Config used to verify replayed transactions

        Returns
        -------
        TangleStore
        """
        store = cls(cfg, rng=rng, clock=clock)
        path = pathlib.Path(log_path)
        if path.exists():
            log.info('Replaying tangle log {}'.format(path))
            pending: dict[bytes, list[Transaction]] = {}
            with open(path, 'r', encoding='utf-8') as f:
                for line in f:
                    if not line.strip():
                        continue
                    tx = Transaction.from_record(json.loads(line))
                    store._insert(tx)
                    if not store.verify_transaction(tx.id):
                        raise CorruptBundle('Replayed transaction {} fails verification'.format(tx.id.hex()))

                    pending.setdefault(tx.address, []).append(tx)
                    if len(pending[tx.address]) == tx.fragment_total:
                        store.address_index.setdefault(tx.address, []).append(
                            Bundle(address=tx.address, transactions=tuple(pending.pop(tx.address))))
        store.log_path = path
        return store

    def _insert(self, tx: Transaction) -> None:
        self.transactions[tx.id] = tx
        for ref in {tx.trunk, tx.branch}:
            self.approvers[ref].add(tx.id)
            self.tips.discard(ref)
        if not self.approvers.get(tx.id):
            self.tips.add(tx.id)

    def _reassemble(self, bundle: Bundle) -> bytes:
        txs = bundle.transactions
        if not txs or [tx.fragment_index for tx in txs] != list(range(txs[0].fragment_total)):
            raise CorruptBundle('Bundle at {} has missing or misordered fragments'.format(bundle.address.hex()))

        chunks = []
        for original in txs:
            stored = self.transactions.get(original.id)
            if stored is None or stored.address != bundle.address or not self.verify_transaction(original.id):
                raise CorruptBundle('Transaction {} in bundle at {} fails verification'.format(
                    original.id.hex(), bundle.address.hex()))
            chunks.append(stored.payload)
        return b''.join(chunks)

    def _append_log(self, transactions: list[Transaction]) -> None:
        if self.log_path is None:
            return
        with open(self.log_path, 'a', encoding='utf-8') as f:
            for tx in transactions:
                f.write(json.dumps(tx.to_record(), separators=(',', ':')) + '\n')


def _u64(value: int) -> bytes:
    return struct.pack('>Q', value)
