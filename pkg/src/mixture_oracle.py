"""
Mixture Oracle

This module simulates the mixture oracle: each call samples one hidden component uniformly at random
and returns the sign of its inner product with the query. Repeating a query v and its negation -v
T times each gives unbiased estimates of how many components assign a positive, negative or zero
projection to v; rounding these estimates recovers the exact counts with high probability.

The base class holds the hidden instance, the random stream and the query ledger. Subclasses decide
how a batch of count estimates is produced: from simulated responses, or exactly (test mode).
"""
from __future__ import annotations

import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from config import PROJECTION_ZERO_TOL
from errors import ConfigError
from lib.mixture_instance import MixtureInstance

logger = logging.getLogger(__name__)

PHASES = ("support-ruff", "support-puff", "sign", "recovery", "align")
DEFAULT_PHASE = "recovery"

# Spawn-key tag separating keyed response streams from ordinary children
_KEYED_STREAM_TAG = 7_919


def sign(x: float) -> int:
    """
    :return: +1 if x >= 0, else -1.
    """
    return 1 if x >= 0 else -1


# ================================================================
# Count containers
# ================================================================
@dataclass(frozen=True)
class CountEstimate:
    """
    Number of components with positive, negative, zero and nonzero projection on a query
    """
    pos: int
    neg: int
    z: int
    nz: int

    def __post_init__(self):
        if min(self.pos, self.neg, self.z, self.nz) < 0:
            raise ConfigError("Counts must be nonnegative.")
        if self.nz != self.pos + self.neg:
            raise ConfigError("nz must equal pos + neg.")

    @property
    def ell(self) -> int:
        return self.pos + self.neg + self.z


def response_set(c: CountEstimate) -> tuple:
    """
    The response multiset of a query as a tuple sorted in descending order, e.g. (1, 0) for {+1, 0}
    """
    return (1,) * c.pos + (0,) * c.z + (-1,) * c.neg


def distinct_responses(c: CountEstimate) -> frozenset:
    return frozenset(response_set(c))


@dataclass
class CountBatch:
    """
    Count estimates for a batch of queries, one entry per query row
    """
    pos: np.ndarray
    neg: np.ndarray
    z: np.ndarray

    @property
    def nz(self) -> np.ndarray:
        return self.pos + self.neg

    def __len__(self) -> int:
        return self.pos.shape[0]

    def __getitem__(self, i: int) -> CountEstimate:
        return CountEstimate(int(self.pos[i]), int(self.neg[i]), int(self.z[i]), int(self.pos[i] + self.neg[i]))

    def take(self, rows) -> CountBatch:
        return CountBatch(self.pos[rows], self.neg[rows], self.z[rows])

    @classmethod
    def concatenate(cls, batches) -> CountBatch:
        batches = list(batches)
        return cls(np.concatenate([b.pos for b in batches]), np.concatenate([b.neg for b in batches]),
                   np.concatenate([b.z for b in batches]))


@dataclass
class QueryLedger:
    """
    Oracle calls, in total and per phase label
    """
    total_oracle_calls: int = 0
    phases: dict = field(default_factory=dict)

    def charge(self, phase: str, calls: int) -> None:
        if calls < 0:
            raise ValueError("Cannot charge a negative number of calls.")
        self.phases[phase] = self.phases.get(phase, 0) + int(calls)
        self.total_oracle_calls += int(calls)

    def merge(self, other: QueryLedger) -> None:
        for phase, calls in other.phases.items():
            self.charge(phase, calls)

    def snapshot(self) -> dict:
        return {'total': self.total_oracle_calls, **dict(sorted(self.phases.items()))}


def default_batchsize(ell: int, failure_budget: float, universe: int, slack: float = 1.0) -> int:
    """
    Smallest T with 4 exp(-T / (2 ell^2)) <= failure_budget / universe, scaled by the slack factor
    :param ell: Number of mixture components
    :param failure_budget: Total failure probability allowed for all planned estimates
    :param universe: Number of count estimates covered by the union bound
    :param slack: Multiplicative slack on the batchsize
    :return: The batchsize T
    """
    if ell < 1 or universe < 1 or slack <= 0:
        raise ConfigError("ell, universe and slack must be positive.")
    if not 0 < failure_budget < 1:
        raise ConfigError("The failure budget must lie in (0, 1).")
    return max(1, math.ceil(slack * 2 * ell * ell * math.log(4 * universe / failure_budget)))


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5).astype(np.int64)


def counts_from_sums(ell: int, T: int, neg_v: np.ndarray, neg_w: np.ndarray) -> CountBatch:
    """
    Turn the number of -1 answers to v and to -v (T draws each) into clamped count estimates
    """
    sum_y = T - 2 * neg_v
    sum_z = T - 2 * neg_w
    z = np.clip(_round_half_up(ell * (sum_y + sum_z) / (2 * T)), 0, ell)
    neg = np.clip(_round_half_up(ell * neg_v / T), 0, ell)
    nz = ell - z
    neg = np.minimum(neg, nz)
    return CountBatch(nz - neg, neg, z)


# ================================================================
# Oracles
# ================================================================
class MixtureOracle:
    """
    Mixture oracle base class
    """

    def __init__(self, instance: MixtureInstance, seed=None, ledger: QueryLedger = None,
                 zero_tol: float = PROJECTION_ZERO_TOL):
        """
        :param instance: The hidden mixture
        :param seed: Seed, SeedSequence or numpy Generator of the response stream
        :param ledger: Ledger to charge (a fresh one by default)
        :param zero_tol: Relative tolerance under which a projection counts as exactly zero
        """
        self.instance = instance
        self.ell = instance.ell
        self.n = instance.n
        if isinstance(seed, np.random.Generator):
            self.rng = seed
            self._seed_seq = None
        else:
            self._seed_seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
            self.rng = np.random.default_rng(self._seed_seq)
        self.ledger = ledger if ledger is not None else QueryLedger()
        self.zero_tol = zero_tol
        self.current_phase = DEFAULT_PHASE
        self._components = instance.dense_matrix()

    @contextmanager
    def phase(self, label: str):
        """
        Charge all queries issued inside the block to the given ledger phase
        """
        previous = self.current_phase
        self.current_phase = label
        try:
            yield self
        finally:
            self.current_phase = previous

    def charge(self, calls: int) -> None:
        self.ledger.charge(self.current_phase, calls)

    def keyed_rng(self, key) -> np.random.Generator:
        """
        A response stream determined by the oracle seed and a tuple of nonnegative integers only
        """
        if self._seed_seq is None:
            self._seed_seq = np.random.SeedSequence(int(self.rng.integers(2 ** 62)))
        spawn_key = tuple(self._seed_seq.spawn_key) + (_KEYED_STREAM_TAG,) + tuple(int(k) for k in key)
        return np.random.default_rng(np.random.SeedSequence(self._seed_seq.entropy, spawn_key=spawn_key))

    def __parse_queries__(self, queries):
        if sp.issparse(queries):
            queries = sp.csr_matrix(queries)
        else:
            queries = np.asarray(queries, dtype=np.float64)
            if queries.ndim == 1:
                queries = queries.reshape(1, -1)
            if queries.ndim != 2:
                raise ConfigError("Queries must be a vector or a matrix of row vectors.")
        if queries.shape[1] != self.n:
            raise ConfigError(f"Query dimension {queries.shape[1]} does not match n={self.n}.")
        return queries

    def project(self, queries) -> np.ndarray:
        """
        Inner products of every query row with every component, snapped to zero within tolerance
        :param queries: Vector, dense matrix or sparse matrix with n columns
        :return: Array of shape (q, ell)
        """
        queries = self.__parse_queries__(queries)
        proj = np.asarray(queries @ self._components, dtype=np.float64).reshape(queries.shape[0], self.ell)
        if sp.issparse(queries):
            scale = np.asarray(abs(queries).max(axis=1).toarray()).ravel()
        else:
            scale = np.abs(queries).max(axis=1) if queries.shape[1] else np.zeros(queries.shape[0])
        proj[np.abs(proj) <= self.zero_tol * scale[:, None]] = 0.0
        return proj

    def true_counts(self, queries) -> CountBatch:
        """
        Exact counts computed from the hidden instance; charges nothing
        """
        proj = self.project(queries)
        return CountBatch((proj > 0).sum(axis=1), (proj < 0).sum(axis=1), (proj == 0).sum(axis=1))

    def respond(self, v) -> int:
        """
        One oracle call: sample a component uniformly and return the sign of its projection on v
        """
        proj = self.project(v)[0]
        j = self.rng.integers(self.ell)
        self.charge(1)
        return sign(proj[j])

    def estimate_counts_batch(self, queries, T: int, rng: np.random.Generator = None) -> CountBatch:
        """
        Estimate the counts of every query row from T calls on the row and T calls on its negation
        :param queries: Query rows (vector, dense matrix or sparse matrix)
        :param T: Batchsize
        :param rng: Response stream (defaults to the oracle's own stream)
        :return: Count estimates, one per row
        """
        if T < 1:
            raise ConfigError("The batchsize must be at least 1.")
        proj = self.project(queries)
        self.charge(2 * T * proj.shape[0])
        return self.__estimate_counts__(proj, T, self.rng if rng is None else rng)

    def estimate_counts(self, v, T: int) -> CountEstimate:
        return self.estimate_counts_batch(v, T)[0]

    def estimate_counts_keyed(self, queries, T: int, keys) -> CountBatch:
        """
        Count estimates where row i is answered from the response stream keyed by keys[i].
        Nothing is charged: the caller charges the planned design as a whole.
        """
        if T < 1:
            raise ConfigError("The batchsize must be at least 1.")
        proj = self.project(queries)
        keys = list(keys)
        if len(keys) != proj.shape[0]:
            raise ConfigError("Expected one key per query row.")
        if not keys:
            return CountBatch(*(np.zeros(0, dtype=np.int64),) * 3)
        return CountBatch.concatenate(self.__estimate_counts__(proj[i:i + 1], T, self.keyed_rng(key))
                                      for i, key in enumerate(keys))

    def __estimate_counts__(self, proj: np.ndarray, T: int, rng: np.random.Generator) -> CountBatch:
        raise NotImplementedError("The oracle subclass must implement __estimate_counts__.")


class SampledMixtureOracle(MixtureOracle):
    """
    Oracle whose count estimates come from simulated responses
    """

    def __estimate_counts__(self, proj: np.ndarray, T: int, rng: np.random.Generator) -> CountBatch:
        # The number of -1 answers among T uniform draws is binomial in the fraction of components
        # with a negative projection (for v) or a positive projection (for -v)
        neg_frac = (proj < 0).sum(axis=1) / self.ell
        pos_frac = (proj > 0).sum(axis=1) / self.ell
        neg_v = rng.binomial(T, neg_frac)
        neg_w = rng.binomial(T, pos_frac)
        return counts_from_sums(self.ell, T, neg_v, neg_w)


class ExactCountOracle(MixtureOracle):
    """
    Test oracle returning the true counts while charging the ledger as the sampled oracle would
    """

    def __estimate_counts__(self, proj: np.ndarray, T: int, rng: np.random.Generator) -> CountBatch:
        return CountBatch((proj > 0).sum(axis=1), (proj < 0).sum(axis=1), (proj == 0).sum(axis=1))


def make_oracle(instance: MixtureInstance, seed=None, exact: bool = False, ledger: QueryLedger = None) -> MixtureOracle:
    oracle_class = ExactCountOracle if exact else SampledMixtureOracle
    return oracle_class(instance, seed=seed, ledger=ledger)


def respond(instance: MixtureInstance, v, rng, ledger: QueryLedger = None) -> int:
    """
    Single oracle call on a given instance with a caller-owned random stream
    """
    return SampledMixtureOracle(instance, seed=np.random.default_rng(rng), ledger=ledger).respond(v)


def estimate_counts(instance: MixtureInstance, v, T: int, rng, ledger: QueryLedger = None) -> CountEstimate:
    """
    Estimate the counts of query v with 2T calls on a given instance with a caller-owned random stream
    """
    return SampledMixtureOracle(instance, seed=np.random.default_rng(rng), ledger=ledger).estimate_counts(v, T)
