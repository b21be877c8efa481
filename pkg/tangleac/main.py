"""Command line entry point: owner, subject, attribute authority and benchmark tools."""
import argparse
import logging
import pathlib
import shutil
import sys
import time

import numpy as np

from .core import abe, harness
from .core.config import Config, parse_overrides
from .core.errors import ConfigError, TangleacError
from .core.groups import make_group
from .core.mam import ChannelRegistry
from .core.owner import OwnerService
from .core.policy import AttributeSet
from .core.subject import HttpOwnerClient, Subject
from .core.tangle import TangleStore
from .core.token import Right, TokenStatus, load_token

log = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s | %(filename)s:%(lineno)d | %(levelname)s: %(message)s'


def parse_arguments(argv=None) -> int:
    """Parse the command line and run the selected command.

    Returns
    -------
    int
        Process exit code
    """
    parser = generate_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)

    if not hasattr(args, 'func'):
        parser.print_usage()
        return 2

    try:
        cfg = load_config(args)
        return args.func(cfg, args) or 0
    except TangleacError as e:
        log.error('{}: {}'.format(type(e).__name__, e))
        return 1


def generate_parser() -> argparse.ArgumentParser:
    """Generate an argument parser for CLI arguments.

    Returns
    -------
    argparse.ArgumentParser
    """
    parser = argparse.ArgumentParser(prog='tangleac', description='Tangle-backed CP-ABE capability access control.')
    parser.add_argument('-v', '--verbose', action='store_true', help='Log at DEBUG level')
    parser.add_argument('-c', '--config', type=str, metavar='FILE', help='YAML config file')
    parser.add_argument('--set', action='append', default=[], metavar='KEY=VALUE', dest='overrides',
                        help='Override a config value, e.g. --set pow.difficulty=4')
    commands = parser.add_subparsers(title='Command', dest='command')

    owner = commands.add_parser('owner', help='Object owner').add_subparsers(dest='action')
    owner.add_parser('serve', help='Serve the /auth and /access API').set_defaults(func=owner_serve)
    grant = owner.add_parser('grant', help='Publish a token for a new policy')
    grant.add_argument('--policy', required=True)
    grant.add_argument('--right', action='append', required=True, metavar='RESOURCE=ACTION[,ACTION]',
                       help='Access right; repeat for several')
    grant.set_defaults(func=owner_grant)
    update = owner.add_parser('update', help='Publish a new token for an existing policy')
    update.add_argument('--policy', required=True)
    rights = update.add_mutually_exclusive_group(required=True)
    rights.add_argument('--right', action='append', metavar='RESOURCE=ACTION[,ACTION]')
    rights.add_argument('--inactive', action='store_true', help='Revoke by publishing an INACTIVE token')
    update.set_defaults(func=owner_update)

    subject = commands.add_parser('subject', help='Subject client').add_subparsers(dest='action')
    fetch = subject.add_parser('fetch', help='Fetch and decrypt the latest token of a channel')
    fetch.add_argument('--root', required=True, help='Channel root address (hex)')
    fetch.set_defaults(func=subject_fetch)
    request = subject.add_parser('request', help='Run the access protocol with a stored token')
    request.add_argument('--token', required=True, metavar='FILE')
    request.add_argument('--resource', required=True)
    request.add_argument('--action', required=True, dest='verb')
    request.set_defaults(func=subject_request)
    keys = subject.add_parser('keys', help='Manage the subject key').add_subparsers(dest='keys_action')
    key_import = keys.add_parser('import', help='Install a key issued by the attribute authority')
    key_import.add_argument('file')
    key_import.set_defaults(func=subject_keys_import)

    authority = commands.add_parser('authority', help='Attribute authority').add_subparsers(dest='action')
    setup = authority.add_parser('setup', help='Generate public parameters and the master key')
    setup.add_argument('--seed', type=int, default=None, help='Seed, for reproducible test deployments only')
    setup.set_defaults(func=authority_setup)
    keygen = authority.add_parser('keygen', help='Issue a secret key')
    keygen.add_argument('--attrs', required=True, help='Comma separated attributes, e.g. Division:IS,Role:Student')
    keygen.add_argument('--out', required=True, metavar='FILE')
    keygen.set_defaults(func=authority_keygen)

    bench = commands.add_parser('bench', help='Benchmarks').add_subparsers(dest='action')
    for name, func in (('attributes', bench_attributes), ('one-to-many', bench_one_to_many),
                       ('policies', bench_policies), ('one-to-one', bench_one_to_one), ('replay', bench_replay)):
        sub = bench.add_parser(name)
        sub.add_argument('--seed', type=int, default=None, help='Defaults to bench.seed')
        sub.add_argument('--out', type=str, default=None, metavar='FILE', help='Append reports as JSON lines')
        sub.set_defaults(func=func)
        if name == 'attributes':
            sub.add_argument('--reps', type=int, default=1)
        if name in ('one-to-many', 'replay'):
            sub.add_argument('--students', type=int, default=1000)
            sub.add_argument('--staff', type=int, default=200)

    return parser


def load_config(args: argparse.Namespace) -> Config:
    overrides = parse_overrides(args.overrides)
    if args.config:
        return Config.from_file(args.config, overrides)
    return Config.from_mapping(overrides)


def parse_right(text: str) -> Right:
    resource, sep, actions = text.partition('=')
    if not sep:
        raise ConfigError('Rights must look like resource=ACTION[,ACTION], got {!r}'.format(text))
    return Right(resource.strip(), tuple(a.strip() for a in actions.split(',') if a.strip()))


def _require(value, key: str):
    if not value:
        raise ConfigError('{} must be set'.format(key))
    return value


def build_store(cfg: Config) -> TangleStore:
    if cfg.tangle.log_path:
        return TangleStore.replay(cfg.tangle.log_path, cfg.pow)
    log.warning('tangle.log_path is not set; the tangle is lost when the process exits')
    return TangleStore(cfg.pow)


def load_public_params(cfg: Config) -> abe.PublicParams:
    group = make_group(cfg.abe)
    path = pathlib.Path(_require(cfg.abe.params_path, 'abe.params_path'))
    return abe.load_public_params(path.read_bytes(), group)


def build_owner(cfg: Config) -> OwnerService:
    """Owner service from config, with its policy table restored from the registry and the tangle."""
    pp = load_public_params(cfg)
    key = abe.load_secret_key(pathlib.Path(_require(cfg.owner.key_path, 'owner.key_path')).read_bytes(), pp.group)
    try:
        seed = bytes.fromhex(_require(cfg.owner.seed, 'owner.seed'))
    except ValueError as e:
        raise ConfigError('owner.seed must be hex') from e

    owner = OwnerService(pp, key, build_store(cfg), seed=seed, registry=ChannelRegistry(cfg.owner.registry_path),
                         clock=time.time, issuer=cfg.owner.issuer, otp_ttl_s=cfg.owner.otp_ttl_s)
    owner.restore()
    return owner


def build_subject(cfg: Config) -> Subject:
    pp = load_public_params(cfg)
    key = abe.load_secret_key(pathlib.Path(_require(cfg.subject.key_path, 'subject.key_path')).read_bytes(), pp.group)
    registry = ChannelRegistry(_require(cfg.subject.registry_path, 'subject.registry_path'))
    return Subject(key, pp, HttpOwnerClient(cfg.subject.owner_endpoint), registry, build_store(cfg),
                   token_dir=cfg.subject.token_dir)


def owner_serve(cfg: Config, args: argparse.Namespace):
    import uvicorn

    from .api import create_app

    owner = build_owner(cfg)
    log.info('Serving {} polic(ies) on {}'.format(len(owner.table), cfg.owner.listen_addr))
    uvicorn.run(create_app(owner), host=cfg.owner.host, port=cfg.owner.port)


def owner_grant(cfg: Config, args: argparse.Namespace):
    root = build_owner(cfg).grant_access(args.policy, [parse_right(r) for r in args.right])
    print(root.hex())


def owner_update(cfg: Config, args: argparse.Namespace):
    update = TokenStatus.INACTIVE if args.inactive else [parse_right(r) for r in args.right]
    print(build_owner(cfg).update_access(args.policy, update).hex())


def subject_fetch(cfg: Config, args: argparse.Namespace):
    token = build_subject(cfg).fetch_token(bytes.fromhex(args.root))
    print(pathlib.Path(cfg.subject.token_dir) / '{}.json'.format(token.address))


def subject_request(cfg: Config, args: argparse.Namespace):
    decision = build_subject(cfg).request_access(load_token(args.token), args.resource, args.verb)
    print(decision.outcome.value if decision.granted else '{} {}'.format(decision.outcome.value,
                                                                         decision.reason.value))
    if decision.granted:
        sys.stdout.buffer.write(decision.resource_payload + b'\n')
    return 0 if decision.granted else 3


def subject_keys_import(cfg: Config, args: argparse.Namespace):
    target = pathlib.Path(_require(cfg.subject.key_path, 'subject.key_path'))
    data = pathlib.Path(args.file).read_bytes()
    key = abe.load_secret_key(data, abe.load_group_for(data, cfg.abe.curve))
    target.parent.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(args.file, target)
    log.info('Imported key with attributes {} to {}'.format(key.attrs.canonical(), target))


def authority_setup(cfg: Config, args: argparse.Namespace):
    params_path = pathlib.Path(_require(cfg.abe.params_path, 'abe.params_path'))
    master_path = pathlib.Path(_require(cfg.abe.master_key_path, 'abe.master_key_path'))
    pp, mk = abe.setup(make_group(cfg.abe), np.random.default_rng(args.seed))
    params_path.write_bytes(abe.dump_public_params(pp))
    master_path.write_bytes(abe.dump_master_key(mk))
    log.info('Wrote public parameters to {} and the master key to {}'.format(params_path, master_path))


def authority_keygen(cfg: Config, args: argparse.Namespace):
    group = make_group(cfg.abe)
    master_path = pathlib.Path(_require(cfg.abe.master_key_path, 'abe.master_key_path'))
    mk = abe.load_master_key(master_path.read_bytes(), group)
    try:
        attrs = AttributeSet(a.strip() for a in args.attrs.split(',') if a.strip())
    except ValueError as e:
        raise ConfigError('Bad --attrs {!r}: {}'.format(args.attrs, e)) from e
    if not attrs:
        raise ConfigError('--attrs names no attributes')
    sk = abe.keygen(mk, attrs, np.random.default_rng())
    pathlib.Path(args.out).write_bytes(abe.dump_secret_key(sk))
    log.info('Issued key for {} to {}'.format(attrs.canonical(), args.out))


def _bench_seed(cfg: Config, args: argparse.Namespace) -> int:
    return cfg.bench.seed if args.seed is None else args.seed


def _emit(reports, args: argparse.Namespace):
    for report in reports:
        print(report.summary())
    if args.out:
        harness.write_reports(reports, args.out)


def bench_attributes(cfg: Config, args: argparse.Namespace):
    reports = harness.bench_attributes(reps=args.reps, seed=_bench_seed(cfg, args), group=make_group(cfg.abe),
                                       difficulty=cfg.bench.difficulty, payload_capacity=cfg.pow.payload_capacity)
    _emit(reports, args)
    log.info('Ciphertext size law: {}'.format(harness.fit_size_law(reports)))


def bench_one_to_many(cfg: Config, args: argparse.Namespace):
    reports = harness.bench_one_to_many(args.students, args.staff, seed=_bench_seed(cfg, args),
                                        group=make_group(cfg.abe), difficulty=cfg.bench.difficulty,
                                        parallel=cfg.bench.parallel)
    _emit(reports, args)


def bench_policies(cfg: Config, args: argparse.Namespace):
    _emit(harness.bench_policies(seed=_bench_seed(cfg, args), group=make_group(cfg.abe),
                                 difficulty=cfg.bench.difficulty), args)


def bench_one_to_one(cfg: Config, args: argparse.Namespace):
    _emit(harness.bench_one_to_one(seed=_bench_seed(cfg, args), group=make_group(cfg.abe),
                                   difficulty=cfg.bench.difficulty), args)


def bench_replay(cfg: Config, args: argparse.Namespace):
    dcaci, proposed = harness.replay_cost_model(harness.MEASURED_COSTS, args.students, args.staff)
    report = harness.BenchReport(
        scenario='replay',
        params={'n_students': args.students, 'n_staff': args.staff},
        counts={'break_even_students': harness.break_even_subjects(harness.MEASURED_COSTS)},
        modeled={'dcaci_total_s': dcaci, 'proposed_total_s': proposed},
    )
    _emit([report], args)
    print('DCACI {:.3f} s, proposed {:.3f} s'.format(dcaci, proposed))


if __name__ == '__main__':
    sys.exit(parse_arguments())
