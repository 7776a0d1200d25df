"""
Support Recovery

Recovers the n x ell support matrix X of all hidden components without adaptivity.

1. An RUFF battery estimates |S(i)|, the number of components whose support contains coordinate i.
2. A PUFF battery with random positive weights estimates |S(i) u S(j)| for every pair of coordinates
   inside the union of supports.
3. Inclusion-exclusion assembles the Gram matrix Z = X X^T.
4. Z is factorized using the separability assumption: every component owns a coordinate that no
   other component uses, so the rows with Z[i, i] = 1 identify the columns.

The representative coordinate of a component is the smallest coordinate it owns alone; its sign is
read from an RUFF row that isolates it from the rest of the union of supports.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from config import DEFAULT_CONSTANTS, Constants
from errors import AssumptionViolatedError, ConfigError, ConstructionFailureError, InconsistencyError
from lib.random_streams import as_seed_sequence, substream
from mixture_oracle import CountBatch, MixtureOracle, default_batchsize
from set_families import CFF, SetFamily, construct_cff, construct_ruff, cff_alphabet, indicator_matrix, ruff_dimensions

logger = logging.getLogger(__name__)


@dataclass
class SupportMatrix:
    """
    Binary n x ell matrix whose column t indicates the support of component t, with the
    representative coordinate of every column
    """
    x: np.ndarray
    reps: tuple

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.int64)
        self.reps = tuple(int(r) for r in self.reps)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def ell(self) -> int:
        return self.x.shape[1]

    def column(self, t: int) -> tuple:
        return tuple(int(i) for i in np.flatnonzero(self.x[:, t]))

    def union(self) -> np.ndarray:
        return np.flatnonzero(self.x.sum(axis=1) > 0)

    def canonical(self) -> list:
        """
        Column supports in a permutation-independent order
        """
        return sorted(self.column(t) for t in range(self.ell))


def representatives(x: np.ndarray) -> tuple:
    """
    :return: For each column, the smallest row whose only nonzero entry lies in that column.
    """
    x = np.asarray(x)
    singleton = x.sum(axis=1) == 1
    reps = []
    for t in range(x.shape[1]):
        owned = np.flatnonzero(singleton & (x[:, t] == 1))
        if owned.size == 0:
            raise AssumptionViolatedError(f"Component {t} owns no coordinate outside the other supports.")
        reps.append(int(owned[0]))
    return tuple(reps)


@dataclass
class SupportStage:
    """
    Everything the support stage learned, so later stages can reuse the RUFF answers
    """
    support: SupportMatrix | None
    s_sizes: np.ndarray
    gram: np.ndarray
    ruff: SetFamily
    puff: SetFamily
    ruff_counts: CountBatch
    batchsizes: dict = field(default_factory=dict)


# ================================================================
# Stage 1: |S(i)| from an RUFF battery
# ================================================================
def compute_s_sizes(oracle: MixtureOracle, ruff: SetFamily, T: int, ell: int = None,
                    return_counts: bool = False):
    """
    Estimate |S(i)| for every coordinate i
    :param oracle: The mixture oracle
    :param ruff: A (d, ell k, 1/2)-RUFF of size n
    :param T: Batchsize per query
    :param ell: Number of components (defaults to the oracle's)
    :param return_counts: Also return the count estimates of the RUFF rows
    :return: Integer vector of length n (and the row counts)
    """
    ell = oracle.ell if ell is None else ell
    a = indicator_matrix(ruff, sparse=True)
    with oracle.phase("support-ruff"):
        counts = oracle.estimate_counts_batch(a, T) if ruff.m else CountBatch(*(np.zeros(0, np.int64),) * 3)
    d = ruff.sets[0].size if ruff.n else 0
    s_sizes = np.zeros(ruff.n, dtype=np.int64)
    if d == 0:
        # No rows, no evidence
        return (s_sizes, counts) if return_counts else s_sizes
    previous = np.ones(ruff.n, dtype=bool)
    a_t = a.T.tocsr()
    for h in range(1, ell + 1):
        b_h = (counts.nz >= h).astype(np.int64)
        overlap = np.asarray(a_t @ b_h).ravel()
        c_h = overlap >= 0.5 * d
        if np.any(c_h & ~previous):
            raise InconsistencyError(f"Coordinates enter C_{h} without being in C_{h - 1}.")
        s_sizes[c_h] = h
        previous = c_h
    logger.debug("Estimated |S(i)| with %d RUFF rows, nonzero at %d coordinates",
                 ruff.m, int(np.count_nonzero(s_sizes)))
    return (s_sizes, counts) if return_counts else s_sizes


# ================================================================
# Stage 2: |S(i) u S(j)| from a weighted PUFF battery
# ================================================================
def isolating_rows(pattern: sp.csr_matrix, inside: np.ndarray, size: int) -> tuple:
    """
    Find rows whose nonzero entries restricted to the columns `inside` number exactly `size`
    :return: (row indices, array of shape (rows, size) with the positions within `inside`)
    """
    sub = pattern[:, inside].tocsr()
    sub.eliminate_zeros()
    row_sizes = np.diff(sub.indptr)
    rows = np.flatnonzero(row_sizes == size)
    picked = sub[rows].tocsr()
    picked.sort_indices()
    return rows, picked.indices.reshape(-1, size) if size else np.zeros((rows.size, 0), dtype=np.int64)


def compute_union_sizes(oracle: MixtureOracle, s_sizes: np.ndarray, puff: SetFamily, T: int,
                        seed=None, ell: int = None) -> np.ndarray:
    """
    Estimate |S(i) u S(j)| for all pairs of coordinates
    :param oracle: The mixture oracle
    :param s_sizes: Output of compute_s_sizes
    :param puff: A (2, ell k)-CFF of size n
    :param T: Batchsize per query
    :param seed: Seed of the Uniform(0, 1) weights
    :param ell: Number of components (defaults to the oracle's)
    :return: Symmetric n x n integer matrix
    """
    ell = oracle.ell if ell is None else ell
    s_sizes = np.asarray(s_sizes, dtype=np.int64)
    pattern = indicator_matrix(puff, sparse=True).astype(np.float64)
    rng = np.random.default_rng(seed)
    best = np.zeros(puff.m, dtype=np.int64)
    with oracle.phase("support-puff"):
        for _ in range(ell + 1):
            weighted = pattern.copy()
            # 1 - U[0, 1) lies in (0, 1], so the weighted rows keep their support
            weighted.data = 1.0 - rng.random(weighted.nnz)
            best = np.maximum(best, oracle.estimate_counts_batch(weighted, T).nz)

    # Degenerate pairs: i == j, or one coordinate outside the union of supports
    union = np.maximum.outer(s_sizes, s_sizes)
    inside = np.flatnonzero(s_sizes > 0)
    if inside.size < 2:
        return union
    rows, pairs = isolating_rows(pattern.tocsr(), inside, 2)
    keys = pairs[:, 0] * inside.size + pairs[:, 1]
    keys, first = np.unique(keys, return_index=True)
    expected = inside.size * (inside.size - 1) // 2
    if keys.size != expected:
        raise ConstructionFailureError(
            f"PUFF isolates only {keys.size} of {expected} coordinate pairs inside the union of supports.")
    a_idx = inside[pairs[first, 0]]
    b_idx = inside[pairs[first, 1]]
    union[a_idx, b_idx] = best[rows[first]]
    union[b_idx, a_idx] = best[rows[first]]
    return union


# ================================================================
# Stage 3 and 4: Gram matrix and its factorization
# ================================================================
def build_gram(s_sizes: np.ndarray, union_sizes: np.ndarray) -> np.ndarray:
    """
    Z[i, j] = |S(i)| + |S(j)| - |S(i) u S(j)|, with Z[i, i] = |S(i)|
    """
    s_sizes = np.asarray(s_sizes, dtype=np.int64)
    union_sizes = np.asarray(union_sizes, dtype=np.int64)
    z = s_sizes[:, None] + s_sizes[None, :] - union_sizes
    np.fill_diagonal(z, s_sizes)
    if np.any(z < 0):
        i, j = np.argwhere(z < 0)[0]
        raise InconsistencyError(f"Negative intersection size at ({i}, {j}).")
    if not np.array_equal(z, z.T):
        raise InconsistencyError("Union size estimates are not symmetric.")
    return z


def factorize_support(z: np.ndarray, ell: int) -> SupportMatrix:
    """
    Recover X from Z = X X^T under the separability assumption
    :param z: Gram matrix
    :param ell: Number of columns
    :return: The support matrix with columns ordered by representative coordinate
    """
    z = np.asarray(z, dtype=np.int64)
    singles = np.flatnonzero(np.diag(z) == 1)
    assigned = np.zeros(z.shape[0], dtype=bool)
    reps = []
    for i in singles:
        if assigned[i]:
            continue
        cluster = singles[z[i, singles] == 1]
        if np.any(assigned[cluster]):
            raise InconsistencyError(f"Singleton coordinate {i} links two different components.")
        assigned[cluster] = True
        reps.append(int(i))
    if len(reps) != ell:
        raise AssumptionViolatedError(
            f"Found {len(reps)} components with a private coordinate, expected {ell}.")
    x = np.minimum(z[:, reps], 1)
    if not np.array_equal(x @ x.T, z):
        raise InconsistencyError("The factorization does not reproduce the Gram matrix.")
    return SupportMatrix(x, reps)


# ================================================================
# Full support stage
# ================================================================
def support_parameters(n: int, k: int, ell: int, constants: Constants = DEFAULT_CONSTANTS) -> dict:
    """
    Sizes of the RUFF and PUFF batteries; the exclusion sizes are capped by what n allows
    """
    t_ruff = max(1, min(ell * k, n - 1))
    t_puff = min(ell * k, n - 2)
    d, m_ruff = ruff_dimensions(n, t_ruff, constants.support_alpha, constants)
    m_puff = cff_alphabet(n, 2, t_puff, constants) if t_puff >= 1 else 1
    return {'t_ruff': t_ruff, 't_puff': t_puff, 'd': d, 'm_ruff': m_ruff, 'm_puff': m_puff}


def plan_support_queries(n: int, k: int, ell: int, constants: Constants = DEFAULT_CONSTANTS) -> dict:
    """
    Oracle calls the support stage issues, computed without querying
    """
    params = support_parameters(n, k, ell, constants)
    t_ruff = default_batchsize(ell, constants.failure_budget, params['m_ruff'], constants.batch_slack)
    t_puff = default_batchsize(ell, constants.failure_budget, (ell + 1) * params['m_puff'], constants.batch_slack)
    calls_ruff = 2 * t_ruff * params['m_ruff']
    calls_puff = 2 * t_puff * (ell + 1) * params['m_puff']
    return {**params, 'T_ruff': t_ruff, 'T_puff': t_puff, 'calls_ruff': calls_ruff,
            'calls_puff': calls_puff, 'calls': calls_ruff + calls_puff}


def _construct_puff(n: int, t: int, seed, constants: Constants) -> SetFamily:
    if t >= 1:
        return construct_cff(n, 2, t, seed, constants)
    # Fewer than three coordinates: one row containing everything isolates the only pair
    return SetFamily(n, 1, [[0]] * n, CFF, {'r': 2, 't': 0})


def support_stage(oracle: MixtureOracle, k: int, ell: int = None, constants: Constants = DEFAULT_CONSTANTS,
                  seed=None, ruff_rows: int = None) -> SupportStage:
    """
    Run the complete support stage and keep its intermediate results
    :param oracle: The mixture oracle
    :param k: Sparsity bound of every component
    :param ell: Number of components (defaults to the oracle's)
    :param constants: Constants of the query designs
    :param seed: Seed of the random designs
    :param ruff_rows: Override of the RUFF alphabet size (row budget)
    :return: The support stage record
    """
    stage = gram_stage(oracle, k, ell, constants, seed, ruff_rows)
    support = factorize_support(stage.gram, oracle.ell if ell is None else ell)
    return SupportStage(support, stage.s_sizes, stage.gram, stage.ruff, stage.puff, stage.ruff_counts,
                        stage.batchsizes)


def gram_stage(oracle: MixtureOracle, k: int, ell: int = None, constants: Constants = DEFAULT_CONSTANTS,
               seed=None, ruff_rows: int = None) -> SupportStage:
    """
    Run the RUFF and PUFF batteries up to the Gram matrix, without factorizing it.
    The returned record has support=None.
    """
    ell = oracle.ell if ell is None else ell
    if k < 1 or ell < 1:
        raise ConfigError("k and ell must be positive.")
    seed = as_seed_sequence(seed)
    n = oracle.n
    params = support_parameters(n, k, ell, constants)
    ruff = construct_ruff(n, params['t_ruff'], constants.support_alpha, substream(seed, 'ruff', 0), constants,
                          m=ruff_rows)
    t_ruff = default_batchsize(ell, constants.failure_budget, max(ruff.m, 1), constants.batch_slack)
    s_sizes, ruff_counts = compute_s_sizes(oracle, ruff, t_ruff, ell, return_counts=True)
    logger.info("RUFF battery: %d rows, T=%d, %d coordinates in the union of supports",
                ruff.m, t_ruff, int(np.count_nonzero(s_sizes)))

    t_puff = default_batchsize(ell, constants.failure_budget, (ell + 1) * params['m_puff'], constants.batch_slack)
    for attempt in range(constants.retries + 1):
        puff = _construct_puff(n, params['t_puff'], substream(seed, 'puff', attempt), constants)
        try:
            union = compute_union_sizes(oracle, s_sizes, puff, t_puff, substream(seed, 'puff-weights', attempt), ell)
            break
        except ConstructionFailureError:
            if attempt == constants.retries:
                raise
            logger.warning("PUFF draw %d lacks an isolating row, drawing again", attempt)
    logger.info("PUFF battery: %d rows x %d weightings, T=%d", puff.m, ell + 1, t_puff)

    gram = build_gram(s_sizes, union)
    return SupportStage(None, s_sizes, gram, ruff, puff, ruff_counts, {'ruff': t_ruff, 'puff': t_puff})


def recover_support(oracle: MixtureOracle, k: int, ell: int = None, constants: Constants = DEFAULT_CONSTANTS,
                    seed=None) -> SupportMatrix:
    """
    Recover the supports of all components up to a permutation of the columns
    """
    return support_stage(oracle, k, ell, constants, seed).support


# ================================================================
# Signs of the representative coordinates
# ================================================================
def recover_rep_signs(oracle: MixtureOracle, support: SupportMatrix, ruff: SetFamily, T: int,
                      row_counts: CountBatch = None) -> np.ndarray:
    """
    Read sign(beta^t at rep(beta^t)) from RUFF rows that isolate each representative coordinate
    :param oracle: The mixture oracle
    :param support: Recovered support matrix
    :param ruff: The RUFF whose rows are used as queries
    :param T: Batchsize per query
    :param row_counts: Count estimates of all RUFF rows if already available (no new queries then)
    :return: Vector of ell signs in {-1, +1}
    """
    inside = support.union()
    pattern = indicator_matrix(ruff, sparse=True)
    rows, positions = isolating_rows(pattern, inside, 1)
    chosen = []
    for t, rep in enumerate(support.reps):
        hits = rows[inside[positions[:, 0]] == rep]
        if hits.size == 0:
            raise ConstructionFailureError(f"No RUFF row isolates representative coordinate {rep}.")
        chosen.append(int(hits[0]))
    if row_counts is None:
        with oracle.phase("sign"):
            counts = oracle.estimate_counts_batch(pattern[chosen], T)
    else:
        counts = row_counts.take(np.asarray(chosen))
    return np.where(counts.pos > 0, 1, -1).astype(np.int64)


def support_and_signs(oracle: MixtureOracle, k: int, ell: int = None, constants: Constants = DEFAULT_CONSTANTS,
                      seed=None) -> tuple:
    """
    Support stage followed by sign recovery on the same RUFF answers (re-drawing the RUFF if needed)
    :return: (SupportStage, signs)
    """
    seed = as_seed_sequence(seed)
    stage = support_stage(oracle, k, ell, constants, seed)
    try:
        return stage, recover_rep_signs(oracle, stage.support, stage.ruff, stage.batchsizes['ruff'],
                                        stage.ruff_counts)
    except ConstructionFailureError:
        logger.warning("RUFF lacks an isolating row for a representative, querying fresh RUFF draws")
    params = support_parameters(oracle.n, k, stage.support.ell, constants)
    for attempt in range(1, constants.retries + 1):
        ruff = construct_ruff(oracle.n, params['t_ruff'], constants.support_alpha,
                              substream(seed, 'ruff', attempt), constants)
        try:
            return stage, recover_rep_signs(oracle, stage.support, ruff, stage.batchsizes['ruff'])
        except ConstructionFailureError:
            if attempt == constants.retries:
                raise
    raise ConstructionFailureError("No RUFF draw isolates every representative coordinate.")