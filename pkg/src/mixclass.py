"""
Command line interface

    mixclass setfam construct --kind ruff --n 100 --t 4 --seed 1 --out ruff.txt
    mixclass setfam verify --in ruff.txt --t 4
    mixclass oracle simulate --instance inst.txt --query-file queries.txt --batch 50 --seed 0
    mixclass support recover --instance inst.txt --k 3 --ell 2 --seed 0 --out support.csv
    mixclass recover two-stage --instance inst.txt --k 3 --ell 2 --epsilon 0.2 --seed 0 --out result.csv
    mixclass two-mix recover --instance inst.txt --k 2 --delta 0.2 --epsilon 0.2 --seed 0
    mixclass experiment --config support.cfg

Exit codes: 0 ok, 2 configuration error, 3 violated assumption, 4 estimation failure.
"""
import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from config import DEFAULT_CONSTANTS
from errors import ConfigError, ConstructionFailureError, MixclassError
from experiments import load_config, run_experiment
from lib.mixture_instance import MixtureInstance, read_instance, write_instance
from mixture_oracle import make_oracle
from set_families import CFF, RUFF, construct_cff, construct_ruff, read_family, verify_cff, verify_ruff, write_family
from support_recovery import support_and_signs
from two_mixture import l2_recover
from vector_recovery import one_stage_recover, two_stage_recover

logger = logging.getLogger("mixclass")


# ================================================================
# Subcommands
# ================================================================
def cmd_setfam_construct(args) -> int:
    if args.kind == RUFF:
        family = construct_ruff(args.n, args.t, args.alpha, args.seed, DEFAULT_CONSTANTS, m=args.rows)
    else:
        family = construct_cff(args.n, args.r, args.t, args.seed, DEFAULT_CONSTANTS)
    write_family(family, args.out)
    logger.info("Wrote %s family with m=%d rows and n=%d sets to %s", family.kind, family.m, family.n, args.out)
    return 0


def cmd_setfam_verify(args) -> int:
    family = read_family(args.input)
    if family.kind == RUFF:
        alpha = args.alpha if args.alpha is not None else family.params.get('alpha', 0.5)
        valid = verify_ruff(family, args.t, alpha)
    else:
        r = args.r if args.r is not None else family.params.get('r', 2)
        valid = verify_cff(family, r, args.t)
    if not valid:
        raise ConstructionFailureError(f"{args.input} does not have the {family.kind.upper()} property.")
    print("valid")
    return 0


def _oracle(args):
    instance = read_instance(args.instance)
    return instance, make_oracle(instance, args.seed, exact=args.exact_oracle)


def cmd_oracle_simulate(args) -> int:
    _, oracle = _oracle(args)
    try:
        queries = np.loadtxt(args.query_file, ndmin=2)
    except ValueError as exc:
        raise ConfigError(f"Malformed query file {args.query_file}: {exc}") from exc
    counts = oracle.estimate_counts_batch(queries, args.batch)
    table = pd.DataFrame({'query_id': np.arange(len(counts)), 'pos': counts.pos, 'neg': counts.neg,
                          'z': counts.z, 'nz': counts.nz, 'calls': 2 * args.batch})
    _write_table(table, args.out)
    return 0


def cmd_support_recover(args) -> int:
    _, oracle = _oracle(args)
    stage, signs = support_and_signs(oracle, args.k, args.ell, DEFAULT_CONSTANTS, args.seed)
    support = stage.support
    table = pd.DataFrame(support.x, columns=[f"col_{t + 1}" for t in range(support.ell)])
    table.insert(0, 'coordinate', np.arange(support.n))
    preamble = (f"# reps: {' '.join(str(r) for r in support.reps)}\n"
                f"# signs: {' '.join(str(int(s)) for s in signs)}\n")
    _write_table(table, args.out, preamble)
    logger.info("Oracle calls: %s", oracle.ledger.snapshot())
    return 0


def cmd_recover(args) -> int:
    _, oracle = _oracle(args)
    if args.mode == 'two-stage':
        result = two_stage_recover(oracle, args.k, args.ell, args.epsilon, DEFAULT_CONSTANTS, args.seed,
                                   num_queries=args.queries)
    else:
        result = one_stage_recover(oracle, args.k, args.ell, args.epsilon, DEFAULT_CONSTANTS, args.seed,
                                   num_blocks=args.queries)
    table = pd.DataFrame({
        'component': np.arange(len(result.estimates)),
        'rep_coord': list(result.support.reps),
        'rep_sign': [int(s) for s in result.rep_signs],
        'l2_error': result.errors,
        'queries_used': result.queries_used['total'],
    })
    _write_table(table, args.out)
    _write_estimates(result.estimates, args.out)
    return 0


def cmd_two_mix(args) -> int:
    _, oracle = _oracle(args)
    result = l2_recover(oracle, args.k, args.epsilon, args.delta, DEFAULT_CONSTANTS, args.seed, dense=args.dense,
                        num_queries=args.queries)
    table = pd.DataFrame({
        'component': np.arange(len(result.estimates)),
        'l2_error': result.errors,
        'queries_used': result.queries_used['total'],
    })
    _write_table(table, args.out)
    _write_estimates(result.estimates, args.out)
    return 0


def cmd_experiment(args) -> int:
    cfg = load_config(args.config)
    table = run_experiment(cfg)
    print(table.to_string(index=False))
    return 0


# ================================================================
# Output
# ================================================================
def _write_table(table: pd.DataFrame, out: str = None, preamble: str = "") -> None:
    text = preamble + table.to_csv(index=False, float_format='%.6g')
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding='utf-8')


def _write_estimates(estimates, out: str = None) -> None:
    if out is None:
        return
    path = Path(out).with_suffix('.estimates.txt')
    write_instance(MixtureInstance(tuple(estimates)), str(path))


# ================================================================
# Parser
# ================================================================
def _add_oracle_arguments(parser) -> None:
    parser.add_argument('--instance', required=True, help='instance file')
    parser.add_argument('--seed', type=int, default=0)
    parser.add_argument('--exact-oracle', action='store_true', help='answer with exact counts (testing)')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='mixclass', description='Query recovery of mixtures of sparse linear classifiers')
    parser.add_argument('-v', '--verbose', action='store_true', help='log debug messages')
    commands = parser.add_subparsers(dest='command', required=True)

    setfam = commands.add_parser('setfam', help='construct and verify set families')
    setfam_commands = setfam.add_subparsers(dest='action', required=True)
    construct = setfam_commands.add_parser('construct')
    construct.add_argument('--kind', choices=(RUFF, CFF), required=True)
    construct.add_argument('--n', type=int, required=True)
    construct.add_argument('--t', type=int, required=True)
    construct.add_argument('--r', type=int, default=2)
    construct.add_argument('--alpha', type=float, default=0.5)
    construct.add_argument('--rows', type=int, default=None, help='override the RUFF alphabet size')
    construct.add_argument('--seed', type=int, default=0)
    construct.add_argument('--out', required=True)
    construct.set_defaults(handler=cmd_setfam_construct)
    verify = setfam_commands.add_parser('verify')
    verify.add_argument('--in', dest='input', required=True)
    verify.add_argument('--t', type=int, required=True)
    verify.add_argument('--r', type=int, default=None)
    verify.add_argument('--alpha', type=float, default=None)
    verify.set_defaults(handler=cmd_setfam_verify)

    oracle = commands.add_parser('oracle', help='simulate count estimates')
    oracle_commands = oracle.add_subparsers(dest='action', required=True)
    simulate = oracle_commands.add_parser('simulate')
    _add_oracle_arguments(simulate)
    simulate.add_argument('--query-file', required=True, help='one whitespace separated query per line')
    simulate.add_argument('--batch', type=int, required=True)
    simulate.add_argument('--out', default=None)
    simulate.set_defaults(handler=cmd_oracle_simulate)

    support = commands.add_parser('support', help='recover the support matrix')
    support_commands = support.add_subparsers(dest='action', required=True)
    support_recover = support_commands.add_parser('recover')
    _add_oracle_arguments(support_recover)
    support_recover.add_argument('--k', type=int, required=True)
    support_recover.add_argument('--ell', type=int, required=True)
    support_recover.add_argument('--out', default=None)
    support_recover.set_defaults(handler=cmd_support_recover)

    recover = commands.add_parser('recover', help='recover all components')
    recover.add_argument('mode', choices=('two-stage', 'one-stage'))
    _add_oracle_arguments(recover)
    recover.add_argument('--k', type=int, required=True)
    recover.add_argument('--ell', type=int, required=True)
    recover.add_argument('--epsilon', type=float, default=0.1)
    recover.add_argument('--queries', type=int, default=None, help='Gaussian queries (or blocks) per component')
    recover.add_argument('--out', default=None)
    recover.set_defaults(handler=cmd_recover)

    two_mix = commands.add_parser('two-mix', help='recover a mixture of two components')
    two_mix_commands = two_mix.add_subparsers(dest='action', required=True)
    two_mix_recover = two_mix_commands.add_parser('recover')
    _add_oracle_arguments(two_mix_recover)
    two_mix_recover.add_argument('--k', type=int, required=True)
    two_mix_recover.add_argument('--delta', type=float, default=None)
    two_mix_recover.add_argument('--epsilon', type=float, default=0.1)
    two_mix_recover.add_argument('--dense', action='store_true', help='components need not be sparse')
    two_mix_recover.add_argument('--queries', type=int, default=None)
    two_mix_recover.add_argument('--out', default=None)
    two_mix_recover.set_defaults(handler=cmd_two_mix)

    experiment = commands.add_parser('experiment', help='run an experiment config')
    experiment.add_argument('--config', required=True)
    experiment.set_defaults(handler=cmd_experiment)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s - %(message)s')
    try:
        return args.handler(args)
    except MixclassError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    except (ValueError, OSError) as exc:
        logger.error("%s", exc)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
