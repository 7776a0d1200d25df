"""
Experiment driver

Seeded Monte-Carlo sweeps over the recovery pipelines and their result files. Experiments are
described by flat `key = value` config files:

    # support recovery for two components
    kind = support-sim
    n = 200
    k = 5
    ell = 2
    seeds = 0-19
    rows = 0, 250, 500, 1000, 2000
    out = results/support_n200.csv

Lists are comma separated; `a-b` expands to the inclusive integer range.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from itertools import permutations
from pathlib import Path

import numpy as np
import pandas as pd

from config import DEFAULT_CONSTANTS, Constants
from errors import AssumptionViolatedError, ConfigError, EstimationFailureError
from lib.mixture_instance import instance_from_supports, planted_separable_instance
from lib.random_streams import stream_rng, substream
from mixture_oracle import make_oracle
from movielens import movielens_from_config
from set_families import ruff_dimensions
from support_recovery import support_parameters, support_stage
from two_mixture import l2_support
from vector_recovery import two_stage_recover

logger = logging.getLogger(__name__)

SUPPORT_SIM = "support-sim"
RECOVERY_SWEEP = "recovery-sweep"
MOVIELENS = "movielens"
KINDS = (SUPPORT_SIM, RECOVERY_SWEEP, MOVIELENS)

# Points of the default RUFF row sweep, as fractions of the formula alphabet size
DEFAULT_ROW_FRACTIONS = (0.0, 0.0625, 0.125, 0.25, 0.5, 1.0)


@dataclass
class ExperimentConfig:
    """
    Parameters of one experiment; constant overrides left as None keep the defaults
    """
    kind: str
    n: int = 200
    k: int = 5
    ell: int = 2
    epsilon: float = 0.1
    delta: float = 0.0
    seeds: tuple = (0,)
    rows: tuple = ()
    m_values: tuple = ()
    c_d: float = None
    c_m: float = None
    c_c: float = None
    c_g: float = None
    batch_slack: float = None
    failure_budget: float = None
    exact_oracle: bool = False
    workers: int = 1
    out: str = "results.csv"
    ratings: str = None
    movies: str = None
    users: tuple = ()
    m1: int = 10
    m2: int = 20
    min_common: int = 500

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"Unknown experiment kind '{self.kind}', expected one of {', '.join(KINDS)}.")
        if self.n < 1 or self.k < 1 or self.ell < 1:
            raise ConfigError("n, k and ell must be positive.")
        if not self.seeds:
            raise ConfigError("At least one seed is required.")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1.")
        if any(r < 0 for r in self.rows) or any(m < 1 for m in self.m_values):
            raise ConfigError("Row budgets must be nonnegative and query counts positive.")
        if self.m1 < 0 or self.m2 < 0:
            raise ConfigError("m1 and m2 must be nonnegative.")
        if self.users and len(self.users) != 2:
            raise ConfigError("users must name exactly two user ids.")

    @property
    def constants(self) -> Constants:
        return DEFAULT_CONSTANTS.with_overrides(c_d=self.c_d, c_m=self.c_m, c_c=self.c_c, c_g=self.c_g,
                                                batch_slack=self.batch_slack, failure_budget=self.failure_budget)


@dataclass
class TrialResult:
    """
    Outcome of one seeded trial
    """
    seed: int
    x: int
    hamming: float = float('nan')
    errors: tuple = ()
    calls: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def __post_init__(self):
        if not np.isnan(self.hamming) and not 0.0 <= self.hamming <= 1.0:
            raise ConfigError("The relative Hamming distance must lie in [0, 1].")


# ================================================================
# Config files
# ================================================================
def _parse_int_list(value: str) -> tuple:
    items = []
    for token in value.split(','):
        token = token.strip()
        if not token:
            continue
        if '-' in token[1:]:
            low, high = token.rsplit('-', 1)
            items.extend(range(int(low), int(high) + 1))
        else:
            items.append(int(token))
    return tuple(items)


def _parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ('1', 'true', 'yes', 'on'):
        return True
    if lowered in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f"not a boolean: {value}")


def parse_config(text: str) -> ExperimentConfig:
    """
    Parse the flat key = value config format
    :param text: Config file contents
    :return: The experiment config
    """
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    values = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f"Line {number}: expected 'key = value', got '{raw.strip()}'.")
        key, value = (part.strip() for part in line.split('=', 1))
        if key not in types:
            raise ConfigError(f"Line {number}: unknown key '{key}'.")
        try:
            if key in ('seeds', 'rows', 'm_values', 'users'):
                values[key] = _parse_int_list(value)
            elif key == 'exact_oracle':
                values[key] = _parse_bool(value)
            elif types[key] == 'int':
                values[key] = int(value)
            elif types[key] == 'float':
                values[key] = float(value)
            else:
                values[key] = value
        except ValueError as exc:
            raise ConfigError(f"Line {number}: bad value for '{key}': {exc}") from exc
    if 'kind' not in values:
        raise ConfigError("The config must set 'kind'.")
    return ExperimentConfig(**values)


def load_config(path: str) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as exc:
        raise ConfigError(f"Cannot read config file {path}: {exc}") from exc
    return parse_config(text)


# ================================================================
# Metrics
# ================================================================
def relative_hamming(true_x: np.ndarray, est_x: np.ndarray) -> float:
    """
    Fraction of disagreeing bits between two n x ell support matrices after the best column matching
    """
    true_x = np.asarray(true_x, dtype=np.int64)
    est_x = np.asarray(est_x, dtype=np.int64)
    if true_x.shape != est_x.shape:
        raise ConfigError(f"Support matrices of shapes {true_x.shape} and {est_x.shape} cannot be compared.")
    n, ell = true_x.shape
    best = min(int(np.sum(true_x != est_x[:, list(sigma)])) for sigma in permutations(range(ell)))
    return best / (n * ell)


def supports_to_matrix(n: int, supports) -> np.ndarray:
    x = np.zeros((n, len(supports)), dtype=np.int64)
    for t, support in enumerate(supports):
        x[list(support), t] = 1
    return x


def default_row_sweep(n: int, k: int, ell: int, constants: Constants = DEFAULT_CONSTANTS) -> tuple:
    """
    RUFF row budgets from zero up to the formula alphabet size
    """
    t = support_parameters(n, k, ell, constants)['t_ruff']
    _, m = ruff_dimensions(n, t, constants.support_alpha, constants)
    return tuple(int(round(f * m)) for f in DEFAULT_ROW_FRACTIONS)


# ================================================================
# Trials
# ================================================================
def support_instance(n: int, k: int, ell: int, seed):
    """
    Two components get independent random k-subsets; more components are planted separable
    """
    rng = stream_rng(seed, 'instance')
    if ell == 2:
        supports = [sorted(rng.choice(n, size=k, replace=False)) for _ in range(2)]
        return instance_from_supports(n, supports, rng)
    return planted_separable_instance(n, k, ell, rng)


def support_trial(n: int, k: int, ell: int, rows: int, seed: int, constants: Constants = DEFAULT_CONSTANTS,
                  exact: bool = False) -> TrialResult:
    """
    Recover the supports of one planted instance with a given RUFF row budget
    """
    start = time.perf_counter()
    instance = support_instance(n, k, ell, seed)
    oracle = make_oracle(instance, substream(seed, 'oracle'), exact)
    try:
        if ell == 2:
            x = supports_to_matrix(n, l2_support(oracle, k, constants, seed, ruff_rows=rows))
        else:
            x = support_stage(oracle, k, ell, constants, seed, ruff_rows=rows).support.x
    except (AssumptionViolatedError, EstimationFailureError) as exc:
        logger.debug("Seed %d with %d rows: %s, scoring the empty support", seed, rows, exc)
        x = np.zeros((n, ell), dtype=np.int64)
    hamming = relative_hamming(instance.support_matrix(), x)
    return TrialResult(seed, rows, hamming, calls=oracle.ledger.snapshot(), wall_time=time.perf_counter() - start)


def recovery_trial(n: int, k: int, ell: int, m: int, seed: int, epsilon: float,
                   constants: Constants = DEFAULT_CONSTANTS, exact: bool = False) -> TrialResult:
    """
    Two-stage recovery of one planted separable instance with m Gaussian queries per component
    """
    start = time.perf_counter()
    instance = planted_separable_instance(n, k, ell, stream_rng(seed, 'instance'))
    oracle = make_oracle(instance, substream(seed, 'oracle'), exact)
    try:
        result = two_stage_recover(oracle, k, ell, epsilon, constants, seed, num_queries=m)
        errors = tuple(float(e) for e in result.errors)
    except (AssumptionViolatedError, EstimationFailureError) as exc:
        logger.warning("Seed %d with m=%d failed: %s", seed, m, exc)
        errors = (float('nan'),) * ell
    return TrialResult(seed, m, errors=errors, calls=oracle.ledger.snapshot(),
                       wall_time=time.perf_counter() - start)


def _run_trials(function, argument_lists: list, workers: int) -> list:
    if workers == 1:
        return [function(*args) for args in argument_lists]
    with ProcessPoolExecutor(max_workers=workers) as executor:
        futures = [executor.submit(function, *args) for args in argument_lists]
        return [future.result() for future in futures]


def run_support_trials(cfg: ExperimentConfig) -> pd.DataFrame:
    """
    Mean relative Hamming distance of the recovered support matrices for every RUFF row budget
    :param cfg: A support-sim config
    :return: Table with columns rows, mean_hamming, stderr, trials
    """
    if cfg.kind != SUPPORT_SIM:
        raise ConfigError(f"run_support_trials needs kind = {SUPPORT_SIM}.")
    constants = cfg.constants
    budgets = cfg.rows or default_row_sweep(cfg.n, cfg.k, cfg.ell, constants)
    arguments = [(cfg.n, cfg.k, cfg.ell, rows, seed, constants, cfg.exact_oracle)
                 for rows in budgets for seed in cfg.seeds]
    trials = _run_trials(support_trial, arguments, cfg.workers)
    table = []
    for i, rows in enumerate(budgets):
        hamming = np.array([t.hamming for t in trials[i * len(cfg.seeds):(i + 1) * len(cfg.seeds)]])
        stderr = float(hamming.std(ddof=1) / np.sqrt(hamming.size)) if hamming.size > 1 else 0.0
        table.append({'rows': rows, 'mean_hamming': float(hamming.mean()), 'stderr': stderr,
                      'trials': hamming.size})
        logger.info("rows=%d: mean relative Hamming distance %.4f over %d seeds", rows, hamming.mean(),
                    hamming.size)
    return pd.DataFrame(table, columns=['rows', 'mean_hamming', 'stderr', 'trials'])


def run_recovery_sweep(cfg: ExperimentConfig) -> pd.DataFrame:
    """
    Median and interquartile range of the largest l2 error of two-stage recovery for every query count
    :param cfg: A recovery-sweep config
    :return: Table with columns m, median_l2, iqr, failures
    """
    if cfg.kind != RECOVERY_SWEEP:
        raise ConfigError(f"run_recovery_sweep needs kind = {RECOVERY_SWEEP}.")
    if not cfg.m_values:
        raise ConfigError("A recovery sweep needs m_values.")
    constants = cfg.constants
    arguments = [(cfg.n, cfg.k, cfg.ell, m, seed, cfg.epsilon, constants, cfg.exact_oracle)
                 for m in cfg.m_values for seed in cfg.seeds]
    trials = _run_trials(recovery_trial, arguments, cfg.workers)
    table = []
    for i, m in enumerate(cfg.m_values):
        worst = np.array([max(t.errors) for t in trials[i * len(cfg.seeds):(i + 1) * len(cfg.seeds)]])
        finite = worst[np.isfinite(worst)]
        if finite.size:
            q1, median, q3 = np.percentile(finite, [25, 50, 75])
        else:
            q1 = median = q3 = float('nan')
        table.append({'m': m, 'median_l2': float(median), 'iqr': float(q3 - q1),
                      'failures': int(worst.size - finite.size)})
        logger.info("m=%d: median max l2 error %.4f", m, median)
    return pd.DataFrame(table, columns=['m', 'median_l2', 'iqr', 'failures'])


# ================================================================
# Result files
# ================================================================
PLOT_COLUMNS = (
    ('rows', 'mean_hamming', 'stderr'),
    ('m', 'median_l2', 'iqr'),
)


def emit_results(results: pd.DataFrame, path: str, plot_columns: tuple = None) -> list:
    """
    Write a result table as CSV and, when it has an x/y/error triple, as whitespace separated plot data
    :param results: The result table
    :param path: Path of the CSV file; the plot data goes next to it with suffix .dat
    :param plot_columns: (x, y, error) column names, detected from the known tables if omitted
    :return: The written paths
    """
    if results is None or len(results) == 0:
        raise ConfigError("There are no results to write.")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    results.to_csv(path, index=False, float_format='%.6g')
    written = [str(path)]
    if plot_columns is None:
        plot_columns = next((cols for cols in PLOT_COLUMNS if set(cols) <= set(results.columns)), None)
    if plot_columns is not None:
        dat = path.with_suffix('.dat')
        results.loc[:, list(plot_columns)].to_csv(dat, sep=' ', index=False, header=False, float_format='%.6g')
        written.append(str(dat))
    logger.info("Wrote %s", ", ".join(written))
    return written


def run_experiment(cfg: ExperimentConfig) -> pd.DataFrame:
    """
    Run the experiment the config describes and write its results to cfg.out
    """
    if cfg.kind == SUPPORT_SIM:
        table = run_support_trials(cfg)
    elif cfg.kind == RECOVERY_SWEEP:
        table = run_recovery_sweep(cfg)
    else:
        table = movielens_from_config(cfg)
    emit_results(table, cfg.out)
    return table
