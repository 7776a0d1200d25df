"""
Two-component mixtures

Recovery of a mixture of two classifiers without the separability assumption.

Supports come from the same RUFF and PUFF batteries as the general support stage; the Gram matrix
of two columns is split around a coordinate that only one component uses.

When the supports differ, a coordinate p used by the first component only is planted with a
dominating entry: the first component then always answers +1 and the answer of the second
component to a Gaussian query can be read from the counts. When the supports are equal, both
components answer the same random +-1 queries and every answer pair is aligned against a pivot
query, which fixes which answer belongs to which component.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from config import DEFAULT_CONSTANTS, MAX_ENTRY_WARNING, Constants
from errors import ConfigError, InconsistencyError, InsufficientDataError
from lib.mixture_instance import SparseVector
from lib.random_streams import as_seed_sequence, stream_rng
from mixture_oracle import CountBatch, MixtureOracle, default_batchsize, response_set
from support_recovery import gram_stage
from vector_recovery import (LabeledQuerySet, RecoveryResult, inf_value, num_gaussian_queries, onebit_estimate,
                             truncated_gaussian)

logger = logging.getLogger(__name__)

# Rows of combined queries evaluated per oracle batch during the ratio sweep
SWEEP_CHUNK_ENTRIES = 1 << 22


@dataclass(frozen=True)
class AlignmentTuple:
    """
    Ordered responses of each component to the pivot query v0 and to a query v
    """
    beta1: tuple
    beta2: tuple

    def __post_init__(self):
        for pair in (self.beta1, self.beta2):
            if len(pair) != 2 or any(r not in (-1, 0, 1) for r in pair):
                raise ConfigError(f"Invalid alignment pair {pair}.")

    def responses(self, position: int) -> tuple:
        """
        :return: The response multiset at position 0 (v0) or 1 (v), sorted in descending order
        """
        return tuple(sorted((self.beta1[position], self.beta2[position]), reverse=True))


@dataclass
class PivotState:
    """
    The pivot query v0. Component 1 is the one answering +1 to v0 (or 0 when no +-1 pivot exists).
    """
    query: np.ndarray
    responses: tuple
    label_one: int = 1

    def __post_init__(self):
        self.query = np.asarray(self.query, dtype=np.float64).ravel()
        self.responses = tuple(sorted(self.responses, reverse=True))
        if len(set(self.responses)) != 2:
            raise ConfigError("A pivot query needs two distinct responses.")
        if self.label_one not in self.responses:
            raise ConfigError("The pivot convention must name one of the pivot responses.")

    @property
    def other(self) -> int:
        return next(r for r in self.responses if r != self.label_one)


# ================================================================
# Responses
# ================================================================
def _require_two(oracle: MixtureOracle) -> None:
    if oracle.ell != 2:
        raise ConfigError(f"The two-component pipeline needs ell = 2, the oracle has {oracle.ell}.")


def classify_response_set(oracle: MixtureOracle, v, T: int) -> tuple:
    """
    :return: The estimated response multiset of v, e.g. (1, -1)
    """
    _require_two(oracle)
    return response_set(oracle.estimate_counts(v, T))


def _nonzero_symbol(responses: tuple) -> int:
    nonzero = [r for r in responses if r != 0]
    return nonzero[0] if nonzero else 0


def sweep_ratios(k: int, delta: float) -> np.ndarray:
    """
    Positive ratios c/d with 1 <= c, d <= ceil(sqrt(k) / delta), deduplicated and ascending
    :return: Integer array of shape (ratios, 2) with the reduced (c, d)
    """
    if not delta > 0:
        raise ConfigError("delta must be positive.")
    bound = math.ceil(math.sqrt(k) / delta - 1e-9)
    ratios = sorted({Fraction(c, d) for c in range(1, bound + 1) for d in range(1, bound + 1)})
    return np.array([(r.numerator, r.denominator) for r in ratios], dtype=np.int64)


def pivot_inf(v0: np.ndarray, k: int, delta: float, constants: Constants = DEFAULT_CONSTANTS) -> float:
    """
    Multiplier of v in v0 + Inf v: every nonzero <v, beta> is at least delta, |<v0, beta>| at most
    sqrt(k) max|v0|
    """
    if not delta > 0:
        raise ConfigError("delta must be positive.")
    return constants.inf_factor * math.sqrt(k) * max(float(np.max(np.abs(v0))), 1.0) / delta


# ================================================================
# Batched alignment against a pivot
# ================================================================
def _zero_zero_batch(oracle: MixtureOracle, v0: np.ndarray, vs: np.ndarray, T: int) -> np.ndarray:
    """
    :return: True where the zero of v is co-aligned with the zero of v0
    """
    with oracle.phase("align"):
        counts = oracle.estimate_counts_batch(v0[None, :] + vs, T)
    return counts.z > 0


def _pivot_zero_batch(oracle: MixtureOracle, v0: np.ndarray, vs: np.ndarray, symbols: np.ndarray, T: int,
                      inf: float) -> tuple:
    """
    :param symbols: The nonzero response s of every v
    :return: (the v0 response of the component orthogonal to v, validity mask)
    """
    with oracle.phase("align"):
        counts = oracle.estimate_counts_batch(v0[None, :] + inf * vs, T)
    mixed = (counts.pos == 1) & (counts.neg == 1)
    both_pos = counts.pos == 2
    both_neg = counts.neg == 2
    # Remove one copy of s from the combined response, the other entry is the answer to v0
    t = np.where(symbols > 0, np.where(both_pos, 1, -1), np.where(both_neg, -1, 1))
    valid = np.where(symbols > 0, both_pos | mixed, both_neg | mixed)
    return t.astype(np.int64), valid


def _pivot_pm_batch(oracle: MixtureOracle, v0: np.ndarray, vs: np.ndarray, ratios: np.ndarray, T: int) -> np.ndarray:
    """
    Sweep c v0 + d v over all ratios
    :return: True where the answers to v are anti-aligned with those to v0
    """
    n = v0.shape[0]
    anti = np.zeros(vs.shape[0], dtype=bool)
    chunk = max(1, SWEEP_CHUNK_ENTRIES // max(1, ratios.shape[0] * n))
    c = ratios[:, 0].astype(np.float64)
    d = ratios[:, 1].astype(np.float64)
    for start in range(0, vs.shape[0], chunk):
        block = vs[start:start + chunk]
        queries = c[None, :, None] * v0[None, None, :] + d[None, :, None] * block[:, None, :]
        with oracle.phase("align"):
            counts = oracle.estimate_counts_batch(queries.reshape(-1, n), T)
        # Under co-alignment every combination keeps one positive and one negative answer
        collapsed = ~((counts.pos == 1) & (counts.neg == 1))
        anti[start:start + chunk] = collapsed.reshape(block.shape[0], ratios.shape[0]).any(axis=1)
    return anti


# ================================================================
# Alignment operations
# ================================================================
def align_zero_zero(oracle: MixtureOracle, v0, v, T: int, r0: tuple = None, r: tuple = None) -> AlignmentTuple:
    """
    Align two queries that each have a zero response. Component 1 is the one orthogonal to v0.
    :param r0: Known response multiset of v0 (estimated if omitted)
    :param r: Known response multiset of v (estimated if omitted)
    """
    _require_two(oracle)
    v0 = np.asarray(v0, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    r0 = classify_response_set(oracle, v0, T) if r0 is None else tuple(r0)
    r = classify_response_set(oracle, v, T) if r is None else tuple(r)
    if 0 not in r0 or 0 not in r:
        raise ConfigError("Both queries need a zero response.")
    a0, a = _nonzero_symbol(r0), _nonzero_symbol(r)
    if _zero_zero_batch(oracle, v0, v[None, :], T)[0]:
        return AlignmentTuple((0, 0), (a0, a))
    return AlignmentTuple((0, a), (a0, 0))


def align_pivot_zero(oracle: MixtureOracle, pivot: PivotState, v, T: int, k: int, delta: float,
                     constants: Constants = DEFAULT_CONSTANTS, r: tuple = None) -> AlignmentTuple:
    """
    Align a query with a zero response to a pivot with responses {+1, -1}
    :param pivot: Pivot with responses (1, -1)
    :param v: Query with 0 in its response multiset
    :param T: Batchsize
    :param k: Sparsity bound
    :param delta: Grid spacing of the components
    :param r: Known response multiset of v (estimated if omitted)
    :return: Alignment of v against the pivot
    """
    _require_two(oracle)
    if pivot.responses != (1, -1):
        raise ConfigError("align_pivot_zero needs a pivot with responses {+1, -1}.")
    v = np.asarray(v, dtype=np.float64)
    r = classify_response_set(oracle, v, T) if r is None else tuple(r)
    if 0 not in r:
        raise ConfigError("The query needs a zero response.")
    s = _nonzero_symbol(r)
    if s == 0:
        raise ConfigError("Both components are orthogonal to the query; nothing to align.")
    inf = pivot_inf(pivot.query, k, delta, constants)
    t, valid = _pivot_zero_batch(oracle, pivot.query, v[None, :], np.array([s]), T, inf)
    if not valid[0]:
        raise InconsistencyError(f"The combined query does not answer {s} for the component seeing v.")
    if t[0] == 1:
        return AlignmentTuple((1, 0), (-1, s))
    return AlignmentTuple((1, s), (-1, 0))


def align_pivot_pm(oracle: MixtureOracle, pivot: PivotState, v, k: int, delta: float, T: int) -> AlignmentTuple:
    """
    Align a query with responses {+1, -1} to a pivot with responses {+1, -1}.
    The answers are anti-aligned iff some positive combination c v0 + d v on the ratio grid is
    orthogonal to a component.
    """
    _require_two(oracle)
    if pivot.responses != (1, -1):
        raise ConfigError("align_pivot_pm needs a pivot with responses {+1, -1}.")
    v = np.asarray(v, dtype=np.float64)
    anti = _pivot_pm_batch(oracle, pivot.query, v[None, :], sweep_ratios(k, delta), T)[0]
    if anti:
        return AlignmentTuple((1, -1), (-1, 1))
    return AlignmentTuple((1, 1), (-1, -1))


def true_alignment(instance, v0, v) -> AlignmentTuple:
    """
    The alignment read off the components, with component 1 answering +1 to v0 (or 0 to v0)
    """
    v0 = np.asarray(v0, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    b = instance.dense_matrix()
    p0, p = v0 @ b, v @ b
    s0 = np.sign(np.where(np.abs(p0) <= 1e-9, 0.0, p0)).astype(int)
    s = np.sign(np.where(np.abs(p) <= 1e-9, 0.0, p)).astype(int)
    if 0 in s0:
        first = int(np.flatnonzero(s0 == 0)[0])
    else:
        first = int(np.argmax(s0))
    second = 1 - first
    return AlignmentTuple((int(s0[first]), int(s[first])), (int(s0[second]), int(s[second])))


# ================================================================
# Supports
# ================================================================
def l2_support(oracle: MixtureOracle, k: int, constants: Constants = DEFAULT_CONSTANTS, seed=None,
               ruff_rows: int = None) -> tuple:
    """
    Supports of both components of a two-component mixture, without separability
    :param oracle: The mixture oracle
    :param k: Sparsity bound
    :param constants: Design constants
    :param seed: Seed of the designs
    :param ruff_rows: Override of the RUFF row budget
    :return: (support 1, support 2) as sorted tuples
    """
    _require_two(oracle)
    stage = gram_stage(oracle, k, 2, constants, seed, ruff_rows)
    s = stage.s_sizes
    z = stage.gram
    singles = np.flatnonzero(s == 1)
    if singles.size == 0:
        both = tuple(int(i) for i in np.flatnonzero(s == 2))
        return both, both
    i0 = int(singles[0])
    first, second = [i0], []
    for j in singles[1:]:
        if z[i0, j] == 1:
            first.append(int(j))
        elif z[i0, j] == 0:
            second.append(int(j))
        else:
            raise InconsistencyError(f"Intersection of coordinates {i0} and {j} is {z[i0, j]}.")
    shared = [int(j) for j in np.flatnonzero(s == 2)]
    return tuple(sorted(first + shared)), tuple(sorted(second + shared))


# ================================================================
# Different supports
# ================================================================
def decode_case1(type1: CountBatch, type2: CountBatch) -> tuple:
    """
    Labels of both components from the counts of v + s Inf e_p (type 1) and of v (type 2)
    :return: (y, z) in {-1, 0, +1}: y for the component without p, z for the component with p
    """
    y = np.where(type1.pos == 2, 1, np.where(type1.neg == 1, -1, 0))
    z = np.zeros_like(y)
    z[(y == 1) & (type2.pos == 2)] = 1
    z[(y == 1) & (type2.pos != 2) & (type2.neg == 1)] = -1
    z[(y == -1) & (type2.pos == 1)] = 1
    z[(y == -1) & (type2.pos != 1) & (type2.neg == 2)] = -1
    z[(y == 0) & (type2.pos == 1)] = 1
    z[(y == 0) & (type2.pos != 1) & (type2.neg == 1)] = -1
    return y.astype(np.int64), z.astype(np.int64)


def sign_labels(labels: np.ndarray) -> np.ndarray:
    """
    Map a zero answer to +1
    """
    return np.where(np.asarray(labels) >= 0, 1, -1).astype(np.int64)


def l2_recover_diff_support(oracle: MixtureOracle, supports: tuple, k: int, epsilon: float = 0.1,
                            constants: Constants = DEFAULT_CONSTANTS, seed=None, num_queries: int = None,
                            mu_min: float = None) -> RecoveryResult:
    """
    Recover two components with different supports
    :param oracle: The mixture oracle
    :param supports: (support 1, support 2), not equal
    :param k: Sparsity bound
    :param epsilon: Target accuracy
    :param constants: Design constants
    :param seed: Seed of the Gaussian queries
    :param num_queries: Override of the number of Gaussian queries
    :param mu_min: Lower bound on nonzero magnitudes (defaults to the instance's)
    :return: Estimates ordered like the supports
    """
    _require_two(oracle)
    seed = as_seed_sequence(seed)
    first, second = (tuple(int(i) for i in s) for s in supports)
    swapped = False
    diff = sorted(set(first) - set(second))
    if not diff:
        diff = sorted(set(second) - set(first))
        first, second = second, first
        swapped = True
    if not diff:
        raise ConfigError("The supports are equal; there is no coordinate to plant.")
    p = diff[0]
    mu_min = oracle.instance.mu_min if mu_min is None else mu_min
    m = num_queries if num_queries is not None else num_gaussian_queries(k, epsilon, constants)
    T = default_batchsize(2, constants.failure_budget, 2 * m + 1, constants.batch_slack)

    e_p = np.zeros(oracle.n)
    e_p[p] = 1.0
    with oracle.phase("sign"):
        c = oracle.estimate_counts(e_p, T)
    if c.nz != 1:
        raise InconsistencyError(f"Coordinate {p} should be used by exactly one component, counts {c}.")
    s = 1 if c.pos == 1 else -1
    inf = inf_value(k, mu_min, constants)
    logger.info("Different supports: planting coordinate %d with sign %+d, %d queries, T=%d", p, s, m, T)

    gauss = truncated_gaussian(stream_rng(seed, 'gaussian', 0), (m, oracle.n), constants.query_bound)
    type1 = gauss.copy()
    type1[:, p] += s * inf
    with oracle.phase("recovery"):
        counts1 = oracle.estimate_counts_batch(type1, T)
        counts2 = oracle.estimate_counts_batch(gauss, T)
    y, z = decode_case1(counts1, counts2)

    with_p = LabeledQuerySet(gauss, sign_labels(z), first)
    without_p = LabeledQuerySet(gauss, sign_labels(y), second)
    estimates = [onebit_estimate(with_p, k), onebit_estimate(without_p, k)]
    label_sets = [with_p, without_p]
    if swapped:
        estimates.reverse()
        label_sets.reverse()
    result = RecoveryResult(estimates, oracle.ledger.snapshot(), label_sets=label_sets)
    return result.evaluate(oracle.instance)


# ================================================================
# Equal supports
# ================================================================
def subgaussian_estimate(lqs: LabeledQuerySet, k: int) -> SparseVector:
    """
    The averaging estimator applied to +-1 queries
    """
    return onebit_estimate(lqs, k)


def _warn_large_entries(estimates) -> None:
    largest = max(max((abs(x) for x in e.entries.values()), default=0.0) for e in estimates)
    if largest > MAX_ENTRY_WARNING:
        logger.warning("Largest estimated entry %.3f exceeds %.2f; +-1 queries may bias the estimate",
                       largest, MAX_ENTRY_WARNING)


def align_to_pivot(oracle: MixtureOracle, queries: np.ndarray, counts: CountBatch, k: int, delta: float, T: int,
                   constants: Constants = DEFAULT_CONSTANTS) -> tuple:
    """
    Label streams of both components from +-1 queries and their response multisets
    :return: (labels 1, labels 2, validity mask) with labels in {-1, 0, +1}
    """
    m = queries.shape[0]
    labels1 = np.zeros(m, dtype=np.int64)
    labels2 = np.zeros(m, dtype=np.int64)
    valid = np.ones(m, dtype=bool)

    single = (counts.pos == 2) | (counts.neg == 2) | (counts.z == 2)
    single_label = np.where(counts.pos == 2, 1, np.where(counts.neg == 2, -1, 0))
    labels1[single] = single_label[single]
    labels2[single] = single_label[single]

    pm = ~single & (counts.pos == 1) & (counts.neg == 1)
    with_zero = ~single & ~pm
    # The nonzero answer of a query answered {s, 0}
    symbols = np.where(counts.pos > 0, 1, -1)

    w = np.flatnonzero(~single)
    if w.size == 0:
        return labels1, labels2, valid
    pm_rows = np.flatnonzero(pm)
    zero_rows = np.flatnonzero(with_zero)
    if pm_rows.size:
        pivot = int(pm_rows[0])
        v0 = queries[pivot]
        labels1[pivot], labels2[pivot] = 1, -1
        rest = pm_rows[1:]
        if rest.size:
            anti = _pivot_pm_batch(oracle, v0, queries[rest], sweep_ratios(k, delta), T)
            labels1[rest] = np.where(anti, -1, 1)
            labels2[rest] = -labels1[rest]
        if zero_rows.size:
            inf = pivot_inf(v0, k, delta, constants)
            t, ok = _pivot_zero_batch(oracle, v0, queries[zero_rows], symbols[zero_rows], T, inf)
            labels1[zero_rows] = np.where(t == 1, 0, symbols[zero_rows])
            labels2[zero_rows] = np.where(t == 1, symbols[zero_rows], 0)
            valid[zero_rows] = ok
        logger.debug("Aligned %d +-1 queries and %d queries with a zero answer to pivot %d",
                     rest.size, zero_rows.size, pivot)
    else:
        # Every two-answer query has a zero; component 1 is the one orthogonal to the pivot
        pivot = int(zero_rows[0])
        v0 = queries[pivot]
        labels1[pivot], labels2[pivot] = 0, symbols[pivot]
        rest = zero_rows[1:]
        if rest.size:
            co = _zero_zero_batch(oracle, v0, queries[rest], T)
            labels1[rest] = np.where(co, 0, symbols[rest])
            labels2[rest] = np.where(co, symbols[rest], 0)
    if not valid.all():
        logger.warning("Dropping %d queries whose combined answers were inconsistent", int((~valid).sum()))
    return labels1, labels2, valid


def l2_recover_same_support(oracle: MixtureOracle, support, k: int, delta: float, epsilon: float = 0.1,
                            constants: Constants = DEFAULT_CONSTANTS, seed=None,
                            num_queries: int = None) -> RecoveryResult:
    """
    Recover two components sharing one support, with entries on the grid delta Z
    :param oracle: The mixture oracle
    :param support: The common support
    :param k: Sparsity bound
    :param delta: Grid spacing
    :param epsilon: Target accuracy
    :param constants: Design constants
    :param seed: Seed of the +-1 queries
    :param num_queries: Override of the number of queries
    :return: Estimates, component 1 being the one answering +1 to the pivot
    """
    _require_two(oracle)
    if delta is None or not delta > 0:
        raise ConfigError("Equal supports need a positive grid spacing delta.")
    seed = as_seed_sequence(seed)
    support = tuple(sorted(int(i) for i in support))
    m = num_queries if num_queries is not None else num_gaussian_queries(k, epsilon, constants)
    ratios = sweep_ratios(k, delta)
    T = default_batchsize(2, constants.failure_budget, m * (ratios.shape[0] + 2), constants.batch_slack)
    logger.info("Equal supports: %d +-1 queries, %d sweep ratios, T=%d", m, ratios.shape[0], T)

    queries = stream_rng(seed, 'pm-queries').choice(np.array([-1.0, 1.0]), size=(m, oracle.n))
    with oracle.phase("recovery"):
        counts = oracle.estimate_counts_batch(queries, T)
    labels1, labels2, valid = align_to_pivot(oracle, queries, counts, k, delta, T, constants)
    if not valid.any():
        raise InsufficientDataError("No query could be labeled.")

    label_sets = [LabeledQuerySet(queries[valid], sign_labels(labels[valid]), support)
                  for labels in (labels1, labels2)]
    estimates = [subgaussian_estimate(lqs, k) for lqs in label_sets]
    _warn_large_entries(estimates)
    result = RecoveryResult(estimates, oracle.ledger.snapshot(), label_sets=label_sets)
    return result.evaluate(oracle.instance)


# ================================================================
# Dispatcher
# ================================================================
def l2_recover(oracle: MixtureOracle, k: int, epsilon: float = 0.1, delta: float = None,
               constants: Constants = DEFAULT_CONSTANTS, seed=None, dense: bool = False,
               num_queries: int = None) -> RecoveryResult:
    """
    Recover a two-component mixture. With dense=True the components need not be sparse: the
    support stage is skipped and the common support is every coordinate.
    :param delta: Grid spacing, required when the supports turn out equal
    """
    _require_two(oracle)
    seed = as_seed_sequence(seed)
    if dense:
        support = tuple(range(oracle.n))
        return l2_recover_same_support(oracle, support, oracle.n, delta, epsilon, constants, seed, num_queries)
    supports = l2_support(oracle, k, constants, seed)
    logger.info("Recovered supports %s and %s", supports[0], supports[1])
    if supports[0] == supports[1]:
        if delta is None:
            raise ConfigError("The supports are equal; a grid spacing delta is required.")
        return l2_recover_same_support(oracle, supports[0], k, delta, epsilon, constants, seed, num_queries)
    return l2_recover_diff_support(oracle, supports, k, epsilon, constants, seed, num_queries)
