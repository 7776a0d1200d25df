"""
Set Families

This module constructs the combinatorial set families that define non-adaptive query batteries:
robust union-free families (RUFF), cover-free families (CFF), and their special cases
UFF = (1,t)-CFF and PUFF = (2,t)-CFF. Constructions are random and not certified; certification
is done by the exhaustive verifiers, whose work is parallelized over the excluded sets with numba.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from itertools import combinations

from numba import njit, prange
import numpy as np
import scipy.sparse as sp

from config import DEFAULT_CONSTANTS, Constants
from errors import BudgetExceededError, ConfigError

logger = logging.getLogger(__name__)

RUFF = "ruff"
CFF = "cff"


@dataclass
class SetFamily:
    """
    n subsets of the alphabet [m], stored as sorted index arrays
    """
    n: int
    m: int
    sets: list
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.sets) != self.n:
            raise ConfigError(f"Expected {self.n} sets, got {len(self.sets)}.")
        self.sets = [np.unique(np.asarray(s, dtype=np.int64)) for s in self.sets]
        for j, s in enumerate(self.sets):
            if s.size and (s[0] < 0 or s[-1] >= self.m):
                raise ConfigError(f"Set {j} has elements outside [0, {self.m}).")
        if self.kind == RUFF and len({s.size for s in self.sets}) > 1:
            raise ConfigError("All sets of an RUFF must have the same size.")

    def membership(self) -> np.ndarray:
        """
        :return: Boolean matrix of shape (n, m) whose row j is the indicator of H_j.
        """
        member = np.zeros((self.n, self.m), dtype=np.bool_)
        for j, s in enumerate(self.sets):
            member[j, s] = True
        return member


def _log_size(n: int) -> float:
    return math.log(max(n, 2))


# ================================================================
# Construction
# ================================================================
@njit
def _partial_shuffle(perm: np.ndarray, swaps: np.ndarray) -> np.ndarray:
    for i in range(swaps.shape[0]):
        j = swaps[i]
        perm[i], perm[j] = perm[j], perm[i]
    return perm[:swaps.shape[0]].copy()


def random_subset(m: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """
    Draw a uniformly random d-subset of [m] with a partial Fisher-Yates shuffle
    """
    swaps = rng.integers(np.arange(d), m)
    return np.sort(_partial_shuffle(np.arange(m, dtype=np.int64), swaps.astype(np.int64)))


def ruff_dimensions(n: int, t: int, alpha: float, constants: Constants = DEFAULT_CONSTANTS) -> tuple:
    """
    :return: The set size d and alphabet size m of a (d, t, alpha)-RUFF of n sets.
    """
    d = math.ceil(constants.c_d * t * _log_size(n) / alpha)
    m = math.ceil(constants.c_m * t * t * _log_size(n) / alpha ** 2)
    return d, m


def cff_alphabet(n: int, r: int, t: int, constants: Constants = DEFAULT_CONSTANTS) -> int:
    return math.ceil(constants.c_c * t ** (r + 1) * _log_size(n))


def construct_ruff(n: int, t: int, alpha: float, seed, constants: Constants = DEFAULT_CONSTANTS,
                   m: int = None) -> SetFamily:
    """
    Construct a random (d, t, alpha)-RUFF
    :param n: Number of sets
    :param t: Number of sets whose union is excluded
    :param alpha: Robustness parameter in (0, 1]
    :param seed: Seed or numpy Generator
    :param constants: Size constants
    :param m: Override of the alphabet size (the set size is capped at m)
    :return: The family; the RUFF property holds with high probability only
    """
    if n < 1:
        raise ConfigError("The number of sets must be positive.")
    if t < 1:
        raise ConfigError("t must be positive.")
    if not 0 < alpha <= 1:
        raise ConfigError("alpha must lie in (0, 1].")
    d, m_formula = ruff_dimensions(n, t, alpha, constants)
    if m is None:
        m = m_formula
    elif m < 0:
        raise ConfigError("The alphabet size must be nonnegative.")
    d = min(d, m)
    rng = np.random.default_rng(seed)
    sets = [random_subset(m, d, rng) for _ in range(n)]
    logger.debug("Constructed RUFF with n=%d, t=%d, alpha=%.3f, d=%d, m=%d", n, t, alpha, d, m)
    return SetFamily(n, m, sets, RUFF, {'d': d, 't': t, 'alpha': alpha})


def construct_cff(n: int, r: int, t: int, seed, constants: Constants = DEFAULT_CONSTANTS) -> SetFamily:
    """
    Construct a random (r, t)-CFF from an m x n matrix with i.i.d. Bernoulli(1/(t+1)) entries
    :param n: Number of sets
    :param r: Size of the intersected group
    :param t: Size of the covering group
    :param seed: Seed or numpy Generator
    :param constants: Size constants
    :return: The family; the CFF property holds with high probability only
    """
    if r < 1 or t < 1:
        raise ConfigError("r and t must be positive.")
    if n < r + t:
        raise ConfigError(f"A ({r},{t})-CFF needs at least {r + t} sets, got {n}.")
    m = cff_alphabet(n, r, t, constants)
    rng = np.random.default_rng(seed)
    p = 1.0 / (t + 1)
    # One column at a time keeps memory at O(m) for large alphabets
    sets = [np.flatnonzero(rng.random(m) < p) for _ in range(n)]
    logger.debug("Constructed CFF with n=%d, r=%d, t=%d, m=%d", n, r, t, m)
    return SetFamily(n, m, sets, CFF, {'r': r, 't': t})


def indicator_matrix(f: SetFamily, sparse: bool = False):
    """
    Build the m x n matrix A with A[i, j] = 1 iff i is in H_j
    :param f: The set family
    :param sparse: Return a scipy CSR matrix instead of a dense array
    :return: The indicator matrix
    """
    cols = np.concatenate([np.full(s.size, j, dtype=np.int64) for j, s in enumerate(f.sets)]) \
        if f.n else np.zeros(0, dtype=np.int64)
    rows = np.concatenate(f.sets) if f.n else np.zeros(0, dtype=np.int64)
    matrix = sp.csr_matrix((np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(f.m, f.n))
    if sparse:
        return matrix
    return matrix.toarray().astype(np.uint8)


def family_from_matrix(matrix, kind: str = CFF, params: dict = None) -> SetFamily:
    """
    Inverse of indicator_matrix: read the sets from the columns
    """
    dense = np.asarray(matrix.toarray() if sp.issparse(matrix) else matrix)
    m, n = dense.shape
    return SetFamily(n, m, [np.flatnonzero(dense[:, j]) for j in range(n)], kind, dict(params or {}))


# ================================================================
# Exhaustive verification
# ================================================================
@njit(parallel=True)
def _ruff_kernel(member: np.ndarray, t: int, threshold: float) -> np.ndarray:
    n, m = member.shape
    ok = np.ones(n, dtype=np.bool_)
    for j in prange(n):
        others = np.empty(n - 1, dtype=np.int64)
        pos = 0
        for i in range(n):
            if i != j:
                others[pos] = i
                pos += 1
        comb = np.arange(t)
        covered = np.zeros(m, dtype=np.bool_)
        while True:
            covered[:] = False
            for a in range(t):
                row = others[comb[a]]
                for e in range(m):
                    if member[row, e]:
                        covered[e] = True
            remaining = 0
            for e in range(m):
                if member[j, e] and not covered[e]:
                    remaining += 1
            if remaining <= threshold:
                ok[j] = False
                break
            # Advance to the next t-combination of the n - 1 other sets
            i = t - 1
            while i >= 0 and comb[i] == n - 1 - t + i:
                i -= 1
            if i < 0:
                break
            comb[i] += 1
            for b in range(i + 1, t):
                comb[b] = comb[b - 1] + 1
    return ok


@njit(parallel=True)
def _cff_kernel(member: np.ndarray, groups: np.ndarray, t: int) -> np.ndarray:
    n, m = member.shape
    num_groups, r = groups.shape
    ok = np.ones(num_groups, dtype=np.bool_)
    for g in prange(num_groups):
        inter = np.ones(m, dtype=np.bool_)
        for a in range(r):
            for e in range(m):
                inter[e] = inter[e] and member[groups[g, a], e]
        rest = np.empty(n - r, dtype=np.int64)
        pos = 0
        for i in range(n):
            inside = False
            for a in range(r):
                if groups[g, a] == i:
                    inside = True
            if not inside:
                rest[pos] = i
                pos += 1
        comb = np.arange(t)
        while True:
            found = False
            for e in range(m):
                if inter[e]:
                    hit = False
                    for a in range(t):
                        if member[rest[comb[a]], e]:
                            hit = True
                            break
                    if not hit:
                        found = True
                        break
            if not found:
                ok[g] = False
                break
            i = t - 1
            while i >= 0 and comb[i] == n - r - t + i:
                i -= 1
            if i < 0:
                break
            comb[i] += 1
            for b in range(i + 1, t):
                comb[b] = comb[b - 1] + 1
    return ok


def verify_ruff(f: SetFamily, t: int, alpha: float, budget: int = None) -> bool:
    """
    Exhaustively check |H_j minus the union of H_i over T| > (1 - alpha) d for all |T| = t and j not in T
    :param f: The family (all sets of equal size d)
    :param t: Size of the excluded groups
    :param alpha: Robustness parameter
    :param budget: Maximum number of (T, j) checks, defaults to the configured cap
    :return: True iff the family is a (d, t, alpha)-RUFF
    """
    budget = DEFAULT_CONSTANTS.verify_budget if budget is None else budget
    sizes = {s.size for s in f.sets}
    if len(sizes) > 1:
        raise ConfigError("verify_ruff requires all sets to have the same size.")
    if t < 1:
        raise ConfigError("t must be positive.")
    if t > f.n - 1:
        # No (T, j) pair exists
        return True
    work = math.comb(f.n - 1, t) * f.n
    if work > budget:
        raise BudgetExceededError(f"RUFF verification needs {work} checks, cap is {budget}.")
    d = sizes.pop()
    member = np.ascontiguousarray(f.membership())
    return bool(_ruff_kernel(member, t, (1.0 - alpha) * d).all())


def verify_cff(f: SetFamily, r: int, t: int, budget: int = None) -> bool:
    """
    Exhaustively check that the intersection of any r sets is not covered by the union of t other sets
    :param f: The family
    :param r: Size of the intersected group
    :param t: Size of the covering group
    :param budget: Maximum number of (T1, T2) checks, defaults to the configured cap
    :return: True iff the family is an (r, t)-CFF
    """
    budget = DEFAULT_CONSTANTS.verify_budget if budget is None else budget
    if r < 1 or t < 1:
        raise ConfigError("r and t must be positive.")
    if f.n < r + t:
        raise ConfigError(f"verify_cff needs at least {r + t} sets, got {f.n}.")
    work = math.comb(f.n, r) * math.comb(f.n - r, t)
    if work > budget:
        raise BudgetExceededError(f"CFF verification needs {work} checks, cap is {budget}.")
    groups = np.array(list(combinations(range(f.n), r)), dtype=np.int64)
    member = np.ascontiguousarray(f.membership())
    return bool(_cff_kernel(member, groups, t).all())


# ================================================================
# Family files
# ================================================================
def write_family(f: SetFamily, path: str) -> None:
    """
    Line 1: `m n kind key=value,...`, then one line of sorted indices per set
    """
    params = ",".join(f"{key}={value}" for key, value in f.params.items()) or "-"
    with open(path, 'w', encoding='utf-8') as handle:
        handle.write(f"{f.m} {f.n} {f.kind} {params}\n")
        for s in f.sets:
            handle.write(" ".join(str(e) for e in s) + "\n")


def read_family(path: str) -> SetFamily:
    with open(path, 'r', encoding='utf-8') as handle:
        lines = handle.read().splitlines()
    try:
        m_str, n_str, kind, params_str = lines[0].split()
        m, n = int(m_str), int(n_str)
        params = {}
        if params_str != "-":
            for item in params_str.split(','):
                key, value = item.split('=')
                params[key] = float(value) if key == 'alpha' else int(value)
        sets = [[int(e) for e in line.split()] for line in lines[1:1 + n]]
    except (IndexError, ValueError) as exc:
        raise ConfigError(f"Malformed family file {path}: {exc}") from exc
    if kind not in (RUFF, CFF):
        raise ConfigError(f"Unknown family kind {kind!r} in {path}.")
    while len(sets) < n:
        sets.append([])
    return SetFamily(n, m, sets, kind, params)
