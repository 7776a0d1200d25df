"""
Vector Recovery

epsilon-recovery of every component of the mixture from Gaussian label streams.

Two-stage: after the supports and the signs of the representative coordinates are known, a
Gaussian query with a dominating entry Inf planted at the representative coordinates of all other
components forces their answers; the number of positive answers then reveals the sign of the
remaining component's projection.

Single-stage: all queries are fixed in advance. Each block of the design is the indicator matrix of
an (ell, ell k)-CFF with Inf at set positions and Gaussian entries elsewhere; after decoding the
supports, one row per component isolates the other representatives and acts as a modified
Gaussian query in every block.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np
import scipy.sparse as sp

from config import DEFAULT_CONSTANTS, Constants
from errors import ConfigError, ConstructionFailureError, InsufficientDataError
from lib.mixture_instance import MixtureInstance, SparseVector
from lib.random_streams import as_seed_sequence, stream_rng
from mixture_oracle import MixtureOracle, default_batchsize
from set_families import construct_cff, indicator_matrix
from support_recovery import SupportMatrix, support_and_signs

logger = logging.getLogger(__name__)

MAX_MATCHED_COMPONENTS = 8


@dataclass
class LabeledQuerySet:
    """
    Queries (rows), their labels in {-1, +1} and the coordinates the estimate may use
    """
    queries: np.ndarray
    labels: np.ndarray
    support: tuple

    def __post_init__(self):
        self.queries = np.atleast_2d(np.asarray(self.queries, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        self.support = tuple(int(i) for i in self.support)
        if self.queries.shape[0] != self.labels.shape[0]:
            raise ConfigError("Queries and labels must have equal lengths.")
        if not np.all(np.isin(self.labels, (-1, 1))):
            raise ConfigError("Labels must lie in {-1, +1}.")

    def __len__(self) -> int:
        return self.labels.shape[0]


@dataclass
class RecoveryResult:
    """
    Estimates of all components, and their evaluation against the truth when available
    """
    estimates: list
    queries_used: dict
    matching: tuple = ()
    errors: np.ndarray = None
    support: SupportMatrix = None
    rep_signs: np.ndarray = None
    label_sets: list = field(default_factory=list)
    design: object = None

    @property
    def max_error(self) -> float:
        return float(np.max(self.errors)) if self.errors is not None else float('nan')

    def evaluate(self, instance: MixtureInstance) -> RecoveryResult:
        self.matching, self.errors, _ = match_and_error(self.estimates, instance.components)
        return self


# ================================================================
# Helpers
# ================================================================
def num_gaussian_queries(k: int, epsilon: float, constants: Constants = DEFAULT_CONSTANTS) -> int:
    """
    m = ceil(C_g k / eps ln(k / eps + e))
    """
    if k < 1 or not epsilon > 0:
        raise ConfigError("k must be positive and epsilon must be positive.")
    return math.ceil(constants.c_g * k / epsilon * math.log(k / epsilon + math.e))


def inf_value(k: int, mu_min: float, constants: Constants = DEFAULT_CONSTANTS) -> float:
    """
    Entry large enough that Inf * mu_min dominates every Gaussian inner product
    """
    if not mu_min > 0:
        raise ConfigError("The smallest nonzero magnitude must be positive.")
    return constants.inf_factor * constants.query_bound * math.sqrt(k) / mu_min


def truncated_gaussian(rng: np.random.Generator, shape, bound: float) -> np.ndarray:
    """
    Standard normal entries, redrawn while their magnitude exceeds the bound
    """
    values = rng.standard_normal(shape)
    outside = np.abs(values) > bound
    while np.any(outside):
        values[outside] = rng.standard_normal(int(outside.sum()))
        outside = np.abs(values) > bound
    return values


def hard_threshold(values: np.ndarray, k: int) -> np.ndarray:
    """
    Keep the k entries of largest magnitude
    """
    if k >= values.shape[0]:
        return values.copy()
    keep = np.argpartition(-np.abs(values), k - 1)[:k]
    out = np.zeros_like(values)
    out[keep] = values[keep]
    return out


def decode_forced_labels(poscounts: np.ndarray, forced_positive: int) -> np.ndarray:
    """
    Label +1 iff the number of positive answers differs from the number of forced positive answers
    """
    return np.where(np.asarray(poscounts) != forced_positive, 1, -1).astype(np.int64)


# ================================================================
# Estimator
# ================================================================
def onebit_estimate(lqs: LabeledQuerySet, k: int) -> SparseVector:
    """
    Average y_i v_i over the target support, keep the k largest entries and normalize
    :param lqs: Labeled Gaussian queries
    :param k: Sparsity of the estimate
    :return: Unit-norm estimate supported within the target support
    """
    if len(lqs) == 0:
        raise InsufficientDataError("Cannot estimate from zero queries.")
    if k < 1:
        raise ConfigError("k must be positive.")
    n = lqs.queries.shape[1]
    cols = np.asarray(lqs.support, dtype=np.int64)
    if cols.size == 0:
        raise InsufficientDataError("The target support is empty.")
    aggregate = lqs.labels @ lqs.queries[:, cols] / len(lqs)
    aggregate = hard_threshold(aggregate, k)
    norm = np.linalg.norm(aggregate)
    if norm == 0:
        raise InsufficientDataError("The aggregate of the labeled queries is zero.")
    dense = np.zeros(n)
    dense[cols] = aggregate / norm
    return SparseVector.from_dense(dense)


def match_and_error(estimates, truth) -> tuple:
    """
    Match estimates to the true components minimizing the largest l2 error
    :param estimates: ell unit vectors (SparseVector or dense)
    :param truth: ell true vectors (SparseVector or dense), normalized before comparison
    :return: (sigma, per-component errors, max error) with sigma[t] the estimate matched to truth t
    """
    if len(estimates) != len(truth):
        raise ConfigError(f"Got {len(estimates)} estimates for {len(truth)} components.")
    if len(truth) > MAX_MATCHED_COMPONENTS:
        raise ConfigError(f"Matching is limited to {MAX_MATCHED_COMPONENTS} components.")
    est = np.array([e.to_dense() if isinstance(e, SparseVector) else np.asarray(e, dtype=np.float64)
                    for e in estimates])
    true = np.array([b.to_dense() if isinstance(b, SparseVector) else np.asarray(b, dtype=np.float64)
                     for b in truth])
    true = true / np.linalg.norm(true, axis=1, keepdims=True)
    dist = np.linalg.norm(true[:, None, :] - est[None, :, :], axis=2)
    best_sigma, best_errors, best_max = None, None, np.inf
    for sigma in permutations(range(len(truth))):
        errors = dist[np.arange(len(truth)), list(sigma)]
        if errors.max() < best_max:
            best_sigma, best_errors, best_max = sigma, errors, errors.max()
    return tuple(int(s) for s in best_sigma), best_errors, float(best_max)


# ================================================================
# Two-stage recovery
# ================================================================
def two_stage_recover(oracle: MixtureOracle, k: int, ell: int = None, epsilon: float = 0.1,
                      constants: Constants = DEFAULT_CONSTANTS, seed=None, num_queries: int = None,
                      gaussian_queries: list = None, mu_min: float = None) -> RecoveryResult:
    """
    Recover all components with modified Gaussian queries issued after the support stage
    :param oracle: The mixture oracle
    :param k: Sparsity bound
    :param ell: Number of components (defaults to the oracle's)
    :param epsilon: Target l2 accuracy, sets the number of Gaussian queries
    :param constants: Design constants
    :param seed: Seed of the random designs
    :param num_queries: Override of the number of Gaussian queries per component
    :param gaussian_queries: Optional per-component Gaussian matrices to use instead of fresh draws
    :param mu_min: Lower bound on nonzero magnitudes (defaults to the instance's)
    :return: The recovery result, evaluated against the oracle's instance
    """
    ell = oracle.ell if ell is None else ell
    seed = as_seed_sequence(seed)
    mu_min = oracle.instance.mu_min if mu_min is None else mu_min
    stage, signs = support_and_signs(oracle, k, ell, constants, seed)
    support = stage.support
    m = num_queries if num_queries is not None else num_gaussian_queries(k, epsilon, constants)
    if gaussian_queries is not None:
        m = gaussian_queries[0].shape[0]
    inf = inf_value(k, mu_min, constants)
    T = default_batchsize(ell, constants.failure_budget, ell * m, constants.batch_slack)
    logger.info("Two-stage recovery: %d modified Gaussian queries per component, T=%d, Inf=%.3g", m, T, inf)

    label_sets, estimates = [], []
    for t in range(ell):
        if gaussian_queries is not None:
            gauss = np.asarray(gaussian_queries[t], dtype=np.float64)
        else:
            gauss = truncated_gaussian(stream_rng(seed, 'gaussian', t), (m, oracle.n), constants.query_bound)
        others = [support.reps[u] for u in range(ell) if u != t]
        queries = gauss.copy()
        queries[:, others] = inf
        forced_positive = int(sum(signs[u] == 1 for u in range(ell) if u != t))
        with oracle.phase("recovery"):
            counts = oracle.estimate_counts_batch(queries, T)
        lqs = LabeledQuerySet(gauss, decode_forced_labels(counts.pos, forced_positive), support.column(t))
        label_sets.append(lqs)
        estimates.append(onebit_estimate(lqs, k))

    result = RecoveryResult(estimates, oracle.ledger.snapshot(), support=support, rep_signs=signs,
                            label_sets=label_sets)
    return result.evaluate(oracle.instance)


# ================================================================
# Single-stage recovery
# ================================================================
@dataclass
class SingleStageDesign:
    """
    Block design of the single-stage algorithm. Every query is a function of the seed only,
    so the full design is fixed before any oracle call; rows are materialized on demand.
    """
    n: int
    ell: int
    num_blocks: int
    inf: float
    pattern: object
    seed: object
    attempt: int = 0
    bound: float = DEFAULT_CONSTANTS.query_bound

    @property
    def rows_per_block(self) -> int:
        return self.pattern.shape[0]

    @property
    def num_queries(self) -> int:
        return self.num_blocks * self.rows_per_block

    def gaussian_rows(self, blocks, row: int) -> np.ndarray:
        return np.array([truncated_gaussian(stream_rng(self.seed, 'gaussian', self.attempt, b, row), self.n, self.bound)
                         for b in blocks]).reshape(len(blocks), self.n)

    def query_rows(self, blocks, row: int, gauss: np.ndarray = None) -> np.ndarray:
        queries = self.gaussian_rows(blocks, row) if gauss is None else gauss.copy()
        queries[:, self.pattern[row].indices] = self.inf
        return queries

    def isolating_row(self, inside: np.ndarray, forced: list) -> int:
        """
        First row containing every forced coordinate and no other coordinate of `inside`
        """
        sub = self.pattern[:, inside].tocsr()
        forced_mask = np.isin(inside, forced).astype(np.int64)
        hits = np.asarray(sub @ forced_mask).ravel()
        sizes = np.diff(sub.indptr)
        rows = np.flatnonzero((hits == len(forced)) & (sizes == len(forced)))
        if rows.size == 0:
            raise ConstructionFailureError(f"No CFF row isolates the coordinates {list(forced)}.")
        return int(rows[0])


def build_single_stage_design(n: int, k: int, ell: int, num_blocks: int, inf: float,
                              constants: Constants = DEFAULT_CONSTANTS, seed=None, attempt: int = 0) -> SingleStageDesign:
    """
    Fix the block design: an (ell, ell k)-CFF indicator repeated over blocks with fresh Gaussian entries
    """
    if num_blocks < 1:
        raise ConfigError("The number of blocks must be positive.")
    seed = as_seed_sequence(seed)
    if ell == 1:
        pattern = sp.csr_matrix((1, n), dtype=np.int8)
    else:
        t = max(1, min(ell * k, n - ell))
        if n < ell + 1:
            raise ConfigError(f"The single-stage design needs n > ell, got n={n}.")
        cff = construct_cff(n, ell, t, stream_rng(seed, 'cff', attempt), constants)
        pattern = indicator_matrix(cff, sparse=True)
    return SingleStageDesign(n, ell, num_blocks, inf, pattern.tocsr(), seed, attempt, constants.query_bound)


def one_stage_recover(oracle: MixtureOracle, k: int, ell: int = None, epsilon: float = 0.1,
                      constants: Constants = DEFAULT_CONSTANTS, seed=None, num_blocks: int = None,
                      mu_min: float = None) -> RecoveryResult:
    """
    Recover all components from a query design fixed before any oracle call
    :param oracle: The mixture oracle
    :param k: Sparsity bound
    :param ell: Number of components (defaults to the oracle's)
    :param epsilon: Target l2 accuracy, sets the number of blocks
    :param constants: Design constants
    :param seed: Seed of the random designs
    :param num_blocks: Override of the number of blocks
    :param mu_min: Lower bound on nonzero magnitudes (defaults to the instance's)
    :return: The recovery result, evaluated against the oracle's instance
    """
    ell = oracle.ell if ell is None else ell
    seed = as_seed_sequence(seed)
    mu_min = oracle.instance.mu_min if mu_min is None else mu_min
    blocks = num_blocks if num_blocks is not None else num_gaussian_queries(k, epsilon, constants)
    inf = inf_value(k, mu_min, constants)

    for attempt in range(constants.retries + 1):
        design = build_single_stage_design(oracle.n, k, ell, blocks, inf, constants, seed, attempt)
        T = default_batchsize(ell, constants.failure_budget, design.num_queries, constants.batch_slack)
        with oracle.phase("recovery"):
            oracle.charge(2 * T * design.num_queries)
        if attempt == 0:
            stage, signs = support_and_signs(oracle, k, ell, constants, seed)
            support = stage.support
            inside = support.union()
        try:
            rows = [design.isolating_row(inside, [support.reps[u] for u in range(ell) if u != t])
                    for t in range(ell)]
            break
        except ConstructionFailureError:
            if attempt == constants.retries:
                raise
            logger.warning("CFF draw %d lacks an isolating row, drawing again", attempt)
    logger.info("Single-stage recovery: %d blocks x %d rows, T=%d", blocks, design.rows_per_block, T)

    label_sets, estimates = [], []
    block_ids = np.arange(blocks)
    for t in range(ell):
        row = rows[t]
        gauss = design.gaussian_rows(block_ids, row)
        queries = design.query_rows(block_ids, row, gauss)
        counts = oracle.estimate_counts_keyed(queries, T, [(design.attempt, b, row) for b in block_ids])
        forced_positive = int(sum(signs[u] == 1 for u in range(ell) if u != t))
        lqs = LabeledQuerySet(gauss, decode_forced_labels(counts.pos, forced_positive), support.column(t))
        label_sets.append(lqs)
        estimates.append(onebit_estimate(lqs, k))

    result = RecoveryResult(estimates, oracle.ledger.snapshot(), support=support, rep_signs=signs,
                            label_sets=label_sets, design=design)
    return result.evaluate(oracle.instance)
