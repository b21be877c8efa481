"""Benchmarks and cost-model replay comparing the policy-channel scheme with the DCACI baseline.

Assertions made about benchmarks bind to operation counts and byte sizes only; wall-clock figures are reported for
information.
"""
import concurrent.futures
import dataclasses
import json
import logging
import math
import pathlib
import time
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.stats

from . import abe
from .config import PowConfig
from .dcaci import DcaciOwner, fetch_dcaci_token
from .errors import NonPositiveModel
from .groups import GroupBase, ToyGroup
from .mam import ChannelRegistry, fetch_message
from .owner import OWNER_POLICY, AccessRequest, LogicalClock, OwnerService
from .policy import AttributeSet, parse_policy, policy_attributes
from .subject import InProcessOwnerClient, Subject
from .tangle import TangleStore
from .token import TokenStatus, rights_from_mapping

log = logging.getLogger(__name__)

STUDENT_POLICY = 'Division:IS AND Role:Student'
STAFF_POLICY = 'Division:IS AND Role:Staff'

STUDENT_RIGHTS = rights_from_mapping({'led1/power': ['TURN_ON', 'TURN_OFF']})
STAFF_RIGHTS = rights_from_mapping({
    'camera1/snapshot': ['GET'],
    'led1/power': ['TURN_ON', 'TURN_OFF'],
})
STUDENT_RIGHTS_UPDATED = rights_from_mapping({
    'led1/power': ['TURN_ON', 'TURN_OFF'],
    'sensor1/temperature': ['GET'],
    'sensor1/humidity': ['GET'],
})

BENCH_RIGHTS = rights_from_mapping({
    'led1/power': ['TURN_ON', 'TURN_OFF'],
    'sensor1/temperature': ['GET'],
    'camera1/snapshot': ['GET'],
})
UPDATE_VARIANTS = ('reduce', 'extend', 'inactivate')


@dataclasses.dataclass(frozen=True)
class CostModel:
    """Mean seconds per operation of the two schemes.

    Parameters
    ----------
    grant_student, grant_staff : float
        DCACI grant to one student or staff member
    publish_student, publish_staff : float
        Publishing the encrypted token of the student or staff policy
    obtain_student, obtain_staff : float
        One subject fetching and decrypting its policy token
    """

    grant_student: float
    grant_staff: float
    publish_student: float
    publish_staff: float
    obtain_student: float
    obtain_staff: float

    def __post_init__(self):
        for field in dataclasses.fields(self):
            value = getattr(self, field.name)
            if not value > 0:
                raise NonPositiveModel('{} must be positive, got {}'.format(field.name, value))


MEASURED_COSTS = CostModel(
    grant_student=18.235,
    grant_staff=19.872,
    publish_student=32.926,
    publish_staff=40.443,
    obtain_student=3.668,
    obtain_staff=3.754,
)


def replay_cost_model(model: CostModel, n_students: int, n_staff: int) -> tuple[float, float]:
    """Modeled total seconds to authorize a population under each scheme.

    Returns
    -------
    tuple[float, float]
        ``(dcaci_total_s, proposed_total_s)``
    """
    dcaci = n_students * model.grant_student + n_staff * model.grant_staff
    proposed = (model.publish_student + model.publish_staff + n_students * model.obtain_student
                + n_staff * model.obtain_staff)
    return dcaci, proposed


def break_even_subjects(model: CostModel) -> Optional[int]:
    """Smallest number of students (no staff) for which DCACI costs strictly more; None if it never does."""
    margin = model.grant_student - model.obtain_student
    if margin <= 0:
        return None
    fixed = model.publish_student + model.publish_staff
    n = math.floor(fixed / margin) + 1
    while n * model.grant_student <= fixed + n * model.obtain_student:
        n += 1
    return n


@dataclasses.dataclass
class BenchReport:
    """One benchmark scenario.

    Parameters
    ----------
    scenario : str
    params : dict
        Scenario inputs (level, population, seed, ...)
    counts : dict
        Exact operation counts and byte sizes
    wall_clock : dict
        Measured seconds per phase
    modeled : dict
        Cost-model totals, when the scenario has one
    """

    scenario: str
    params: dict
    counts: dict = dataclasses.field(default_factory=dict)
    wall_clock: dict = dataclasses.field(default_factory=dict)
    modeled: dict = dataclasses.field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    def summary(self) -> str:
        counts = ', '.join('{}={}'.format(k, v) for k, v in sorted(self.counts.items()))
        return '{} {}: {}'.format(self.scenario, self.params, counts)


def write_reports(reports: Iterable[BenchReport], path: str) -> None:
    """Append reports to a JSON-lines file."""
    with open(pathlib.Path(path), 'a', encoding='utf-8') as f:
        for report in reports:
            f.write(report.to_json() + '\n')


class Deployment:
    """An attribute authority, a tangle and an owner wired together in one process.

    Parameters
    ----------
    group : GroupBase, optional
        Pairing backend; the toy group if None
    seed : int
        Seed for every generator in the deployment
    difficulty : int
        PoW difficulty of the tangle
    owner_attrs : Iterable[str]
        Attributes of the owner key besides Role:Owner
    payload_capacity : int
    """

    def __init__(self, group: GroupBase = None, seed: int = 0, difficulty: int = 4, owner_attrs: Iterable = (),
                 payload_capacity: int = 1024):
        self.group = group or ToyGroup()
        self.seed_sequence = np.random.SeedSequence(seed)
        self.rng = self.spawn_rng()
        self.clock = LogicalClock()
        self.store = TangleStore(PowConfig(difficulty=difficulty, payload_capacity=payload_capacity),
                                 rng=self.spawn_rng(), clock=lambda: int(self.clock() * 1000))
        self.pp, self.mk = abe.setup(self.group, self.rng)
        self.registry = ChannelRegistry()

        owner_key = abe.keygen(self.mk, AttributeSet(owner_attrs) | AttributeSet([OWNER_POLICY]), self.rng)
        self.owner = OwnerService(self.pp, owner_key, self.store, seed=self.rng.bytes(32), rng=self.spawn_rng(),
                                  clock=self.clock, registry=self.registry)
        self.client = InProcessOwnerClient(self.owner)

    def spawn_rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed_sequence.spawn(1)[0])

    def subject(self, attrs: Iterable, client=None, token_dir: str = None) -> Subject:
        """A subject with a fresh key over ``attrs`` and its own transport tap."""
        key = abe.keygen(self.mk, AttributeSet(attrs), self.rng)
        return Subject(key, self.pp, client or InProcessOwnerClient(self.owner), self.registry, self.store,
                       rng=self.spawn_rng(), token_dir=token_dir)


def bench_policy(level: int) -> str:
    """Conjunction of ``level`` fixed-width attributes, so ciphertext size grows by a constant per attribute."""
    return ' AND '.join('Attr{:02d}:Yes'.format(i) for i in range(1, level + 1))


def update_rights(variant: str) -> Optional[tuple]:
    """Rights after an update of the given variant; None means inactivate."""
    if variant == 'reduce':
        return BENCH_RIGHTS[:1]
    if variant == 'extend':
        return BENCH_RIGHTS + rights_from_mapping({'sensor1/humidity': ['GET'], 'door1/lock': ['LOCK', 'UNLOCK']})
    if variant == 'inactivate':
        return None
    raise ValueError('Unknown update variant {!r}'.format(variant))


def _timed(fn, *args):
    start = time.perf_counter()
    result = fn(*args)
    return result, time.perf_counter() - start


def _delta(snapshot, before: dict) -> dict:
    after = snapshot()
    return {k: after[k] - before[k] for k in after}


def bench_attributes(levels: Sequence[int] = (3, 6, 9, 12), reps: int = 1, seed: int = 0, group: GroupBase = None,
                     difficulty: int = 4, payload_capacity: int = 1024) -> list[BenchReport]:
    """Grant, fetch, verify and update a token under policies with a growing number of attributes.

    The rights are fixed to three. Verification is split into OTP acquisition, request generation and request
    evaluation.

    Returns
    -------
    list[BenchReport]
        One report per level
    """
    if reps < 1:
        raise ValueError('reps must be at least 1, got {}'.format(reps))

    reports = []
    for level in levels:
        policy = bench_policy(level)
        attrs = policy_attributes(parse_policy(policy))
        timings = {phase: [] for phase in ('grant', 'fetch', 'auth', 'build', 'evaluate', 'update')}
        counts = {}
        log.info('Attribute benchmark: {} attributes, {} rep(s)'.format(level, reps))

        for rep in range(reps):
            d = Deployment(group, seed=seed + rep, difficulty=difficulty, owner_attrs=attrs,
                           payload_capacity=payload_capacity)
            subject = d.subject(attrs)
            before = d.store.stats['transactions_attached']

            root, t = _timed(d.owner.grant_access, policy, BENCH_RIGHTS)
            timings['grant'].append(t)
            token_transactions = d.store.stats['transactions_attached'] - before
            entry = d.registry.by_root(root)
            ciphertext, _ = fetch_message(d.store, root, entry.verify_key)

            token, t = _timed(subject.fetch_token, root)
            timings['fetch'].append(t)

            otp, t = _timed(subject.authenticate, token)
            timings['auth'].append(t)
            request_ct, t = _timed(subject.build_access_request, token, 'led1/power', 'TURN_ON', otp)
            timings['build'].append(t)
            decision, t = _timed(subject.client.access, request_ct)
            timings['evaluate'].append(t)

            variant = UPDATE_VARIANTS[int(d.rng.integers(len(UPDATE_VARIANTS)))]
            rights = update_rights(variant)
            _, t = _timed(d.owner.update_access, policy, TokenStatus.INACTIVE if rights is None else rights)
            timings['update'].append(t)

            request_plain = AccessRequest('led1/power', 'TURN_ON', token, otp).to_bytes()
            counts = {
                'token_transactions': token_transactions,
                'ciphertext_bytes': len(ciphertext),
                'request_ct_bytes': len(request_ct),
                'request_overhead_bytes': len(request_ct) - len(request_plain),
                'messages_to_owner': len(subject.client.sent),
                'granted': int(decision.granted),
                'update_variant': variant,
            }

        reports.append(BenchReport(
            scenario='attributes',
            params={'attributes': level, 'reps': reps, 'seed': seed, 'difficulty': difficulty},
            counts=counts,
            wall_clock={phase: float(np.mean(values)) for phase, values in timings.items()},
        ))
    return reports


def fit_size_law(reports: Sequence[BenchReport]) -> dict:
    """Least-squares fit of ciphertext bytes against the number of policy attributes."""
    x = np.array([r.params['attributes'] for r in reports], dtype=float)
    y = np.array([r.counts['ciphertext_bytes'] for r in reports], dtype=float)
    fit = scipy.stats.linregress(x, y)
    return {'slope': float(fit.slope), 'intercept': float(fit.intercept), 'rvalue': float(fit.rvalue)}


def bench_one_to_many(n_students: int = 1000, n_staff: int = 200, seed: int = 0, group: GroupBase = None,
                      difficulty: int = 4, parallel: bool = False) -> tuple[BenchReport, BenchReport]:
    """Authorize a population of students and staff under both schemes.

    Returns
    -------
    tuple[BenchReport, BenchReport]
        ``(proposed, dcaci)``
    """
    if n_students < 0 or n_staff < 0:
        raise ValueError('Population sizes must be non-negative')
    params = {'n_students': n_students, 'n_staff': n_staff, 'seed': seed, 'difficulty': difficulty}
    dcaci_model, proposed_model = replay_cost_model(MEASURED_COSTS, n_students, n_staff)
    log.info('One-to-many benchmark: {} students, {} staff'.format(n_students, n_staff))

    # Proposed scheme: one token per policy, every subject fetches
    d = Deployment(group, seed=seed, difficulty=difficulty, owner_attrs=['Division:IS', 'Role:Student', 'Role:Staff'])
    start = time.perf_counter()
    student_root = d.owner.grant_access(STUDENT_POLICY, STUDENT_RIGHTS)
    staff_root = d.owner.grant_access(STAFF_POLICY, STAFF_RIGHTS)
    publish_s = time.perf_counter() - start

    population = [(d.subject(['Division:IS', 'Role:Student']), student_root) for _ in range(n_students)]
    population += [(d.subject(['Division:IS', 'Role:Staff']), staff_root) for _ in range(n_staff)]

    fetches_before = d.store.stats['bundle_fetches']
    start = time.perf_counter()
    if parallel:
        with concurrent.futures.ThreadPoolExecutor() as pool:
            list(pool.map(lambda pair: pair[0].fetch_token(pair[1]), population))
    else:
        for subject, root in population:
            subject.fetch_token(root)
    obtain_s = time.perf_counter() - start

    proposed = BenchReport(
        scenario='one-to-many/proposed',
        params=dict(params, parallel=parallel),
        counts={
            'owner_publishes': d.owner.stats['publishes'],
            'subject_fetches': sum(s.stats['fetches'] for s, _ in population),
            'bundle_fetches': d.store.stats['bundle_fetches'] - fetches_before,
            'transactions': d.store.stats['transactions_attached'],
        },
        wall_clock={'publish': publish_s, 'obtain': obtain_s, 'total': publish_s + obtain_s},
        modeled={'total_s': proposed_model},
    )

    # DCACI: one token and one channel per subject
    rng = np.random.default_rng(seed)
    store = TangleStore(PowConfig(difficulty=difficulty), rng=rng, clock=lambda: 0)
    baseline = DcaciOwner(store, seed=rng.bytes(32), rng=rng)
    start = time.perf_counter()
    for i in range(n_students):
        baseline.grant('student_{:04d}'.format(i), STUDENT_RIGHTS)
    for i in range(n_staff):
        baseline.grant('staff_{:04d}'.format(i), STAFF_RIGHTS)
    grant_s = time.perf_counter() - start

    dcaci = BenchReport(
        scenario='one-to-many/dcaci',
        params=params,
        counts={
            'owner_publishes': baseline.stats['publishes'],
            'subject_fetches': 0,
            'channels': len(baseline.channels),
            'transactions': store.stats['transactions_attached'],
        },
        wall_clock={'grant': grant_s, 'total': grant_s},
        modeled={'total_s': dcaci_model},
    )
    log.info('One-to-many: proposed {} publish(es), DCACI {} publish(es)'.format(
        proposed.counts['owner_publishes'], dcaci.counts['owner_publishes']))
    return proposed, dcaci


def bench_policies(levels: Sequence[int] = (1, 10, 100), seed: int = 0, group: GroupBase = None,
                   difficulty: int = 4) -> list[BenchReport]:
    """Show that subject-side work does not depend on how many policies the owner maintains."""
    reports = []
    for n in levels:
        policies = ['Division:D{:03d} AND Role:Student'.format(i) for i in range(n)]
        owner_attrs = {'Role:Student'} | {'Division:D{:03d}'.format(i) for i in range(n)}
        d = Deployment(group, seed=seed, difficulty=difficulty, owner_attrs=owner_attrs)
        log.info('Policy benchmark: {} policies'.format(n))

        start = time.perf_counter()
        roots = [d.owner.grant_access(policy, BENCH_RIGHTS) for policy in policies]
        publish_s = time.perf_counter() - start

        subject = d.subject(['Division:D000', 'Role:Student'])
        fetches_before = d.store.stats['bundle_fetches']
        token, fetch_s = _timed(subject.fetch_token, roots[0])
        subject_fetches = d.store.stats['bundle_fetches'] - fetches_before

        decision, verify_s = _timed(subject.request_access, token, 'led1/power', 'TURN_ON')

        indices = {entry.policy: entry.channel.index for entry in d.owner.table}
        publishes_before = d.owner.stats['publishes']
        _, update_s = _timed(d.owner.update_access, policies[0], update_rights('reduce'))
        touched = sum(1 for entry in d.owner.table if entry.channel.index != indices[entry.policy])

        reports.append(BenchReport(
            scenario='policies',
            params={'n_policies': n, 'seed': seed, 'difficulty': difficulty},
            counts={
                'owner_publishes': publishes_before,
                'subject_bundle_fetches': subject_fetches,
                'messages_to_owner': len(subject.client.sent),
                'granted': int(decision.granted),
                'update_publishes': d.owner.stats['publishes'] - publishes_before,
                'channels_touched': touched,
            },
            wall_clock={'publish': publish_s, 'fetch': fetch_s, 'verify': verify_s, 'update': update_s},
        ))
    return reports


def bench_one_to_one(seed: int = 0, group: GroupBase = None, difficulty: int = 4) -> list[BenchReport]:
    """One owner and one staff member: per-phase operation counts of both schemes."""
    d = Deployment(group, seed=seed, difficulty=difficulty, owner_attrs=['Division:IS', 'Role:Staff'])
    subject = d.subject(['Division:IS', 'Role:Staff'])
    owner_stats, store_stats = d.owner.stats, d.store.stats

    def snapshot():
        return {
            'owner_publishes': owner_stats['publishes'],
            'bundle_fetches': store_stats['bundle_fetches'],
            'messages_to_owner': len(subject.client.sent),
            'abe_encryptions': owner_stats['abe_encryptions'] + subject.stats['abe_encryptions'],
            'abe_decryptions': owner_stats['abe_decryptions'] + subject.stats['abe_decryptions'],
        }

    counts, clock = {}, {}
    before = snapshot()
    start = time.perf_counter()
    root = d.owner.grant_access(STAFF_POLICY, STAFF_RIGHTS)
    token = subject.fetch_token(root)
    clock['authorization'] = time.perf_counter() - start
    counts['authorization'] = _delta(snapshot, before)

    before = snapshot()
    start = time.perf_counter()
    d.owner.update_access(STAFF_POLICY, update_rights('reduce'))
    token = subject.fetch_token(root)
    clock['update'] = time.perf_counter() - start
    counts['update'] = _delta(snapshot, before)

    before = snapshot()
    decision, clock['verification'] = _timed(subject.request_access, token, 'led1/power', 'TURN_ON')
    counts['verification'] = dict(_delta(snapshot, before), granted=int(decision.granted))
    proposed = BenchReport(scenario='one-to-one/proposed', params={'seed': seed, 'difficulty': difficulty},
                           counts=counts, wall_clock=clock)

    rng = np.random.default_rng(seed)
    store = TangleStore(PowConfig(difficulty=difficulty), rng=rng, clock=lambda: 0)
    baseline = DcaciOwner(store, seed=rng.bytes(32), rng=rng)

    def baseline_snapshot():
        return {
            'owner_publishes': baseline.stats['publishes'],
            'bundle_fetches': store.stats['bundle_fetches'],
            'messages_to_owner': baseline.stats['access_requests'],
            'abe_encryptions': baseline.stats['abe_encryptions'],
            'abe_decryptions': baseline.stats['abe_decryptions'],
        }

    counts, clock = {}, {}
    before = baseline_snapshot()
    start = time.perf_counter()
    baseline.grant('staff_0000', STAFF_RIGHTS)
    channel = baseline.channels['staff_0000']
    baseline_token = fetch_dcaci_token(store, channel.root, channel.verify_key)
    clock['authorization'] = time.perf_counter() - start
    counts['authorization'] = _delta(baseline_snapshot, before)

    before = baseline_snapshot()
    start = time.perf_counter()
    baseline.update('staff_0000', update_rights('reduce'))
    baseline_token = fetch_dcaci_token(store, channel.root, channel.verify_key)
    clock['update'] = time.perf_counter() - start
    counts['update'] = _delta(baseline_snapshot, before)

    before = baseline_snapshot()
    decision, clock['verification'] = _timed(baseline.get_access, 'staff_0000', baseline_token, 'led1/power',
                                             'TURN_ON')
    counts['verification'] = dict(_delta(baseline_snapshot, before), granted=int(decision.granted))
    dcaci = BenchReport(scenario='one-to-one/dcaci', params={'seed': seed, 'difficulty': difficulty},
                        counts=counts, wall_clock=clock)
    return [proposed, dcaci]
