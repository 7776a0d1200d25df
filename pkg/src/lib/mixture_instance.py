"""
Hidden mixtures of sparse unit vectors, as held by the oracle simulator.

Besides the two container types this module provides generators for planted instances
and the plain-text instance format used by the command line interface:

    n ell delta
    k idx:val idx:val ...      (one line per component, 0-based coordinates)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations, permutations

import numpy as np

from errors import ConfigError

UNIT_NORM_TOL = 1e-12
GRID_TOL = 1e-9


@dataclass(frozen=True)
class SparseVector:
    """
    Real vector of dimension n stored as a map from coordinate to nonzero value
    """
    n: int
    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("The dimension must be positive.")
        for idx, value in self.entries.items():
            if not 0 <= idx < self.n:
                raise ConfigError(f"Coordinate {idx} outside [0, {self.n}).")
            if value == 0:
                raise ConfigError(f"Coordinate {idx} stores a zero value.")

    @classmethod
    def from_dense(cls, values) -> SparseVector:
        values = np.asarray(values, dtype=np.float64)
        return cls(values.shape[0], {int(i): float(values[i]) for i in np.flatnonzero(values)})

    @cached_property
    def support(self) -> tuple:
        return tuple(sorted(self.entries))

    @cached_property
    def norm(self) -> float:
        return float(np.sqrt(sum(value * value for value in self.entries.values())))

    def is_unit(self) -> bool:
        return abs(self.norm - 1.0) <= UNIT_NORM_TOL

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.n)
        for idx, value in self.entries.items():
            dense[idx] = value
        return dense

    def normalized(self) -> SparseVector:
        if self.norm == 0:
            raise ConfigError("Cannot normalize the zero vector.")
        return SparseVector(self.n, {idx: value / self.norm for idx, value in self.entries.items()})


@dataclass(frozen=True)
class MixtureInstance:
    """
    The ell hidden unit vectors of a mixture together with their precision grid delta (0 if unconstrained)
    """
    components: tuple
    delta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, 'components', tuple(self.components))
        if len(self.components) < 1:
            raise ConfigError("A mixture needs at least one component.")
        dims = {beta.n for beta in self.components}
        if len(dims) != 1:
            raise ConfigError("All components must share the same dimension.")
        for t, beta in enumerate(self.components):
            if not beta.entries:
                raise ConfigError(f"Component {t} is the zero vector.")
            if not beta.is_unit():
                raise ConfigError(f"Component {t} is not unit norm (norm {beta.norm}).")
        if self.delta < 0:
            raise ConfigError("The precision grid must be nonnegative.")
        if self.delta > 0:
            for t, beta in enumerate(self.components):
                ratios = np.array(list(beta.entries.values())) / self.delta
                if np.any(np.abs(ratios - np.round(ratios)) > GRID_TOL):
                    raise ConfigError(f"Component {t} does not lie on the grid with delta={self.delta}.")

    @property
    def ell(self) -> int:
        return len(self.components)

    @property
    def n(self) -> int:
        return self.components[0].n

    @cached_property
    def mu_min(self) -> float:
        return min(abs(value) for beta in self.components for value in beta.entries.values())

    @cached_property
    def max_sparsity(self) -> int:
        return max(len(beta.entries) for beta in self.components)

    def dense_matrix(self) -> np.ndarray:
        """
        :return: The n x ell matrix whose columns are the components.
        """
        return np.stack([beta.to_dense() for beta in self.components], axis=1)

    def support_matrix(self) -> np.ndarray:
        """
        :return: The n x ell binary support indicator matrix.
        """
        return (self.dense_matrix() != 0).astype(np.int64)

    def is_separable(self) -> bool:
        """
        True if every component owns a coordinate outside the supports of all other components
        """
        x = self.support_matrix()
        owned = x[x.sum(axis=1) == 1]
        return bool(np.all(owned.sum(axis=0) > 0))


# ================================================================
# Planted instances
# ================================================================
def random_unit_vector(n: int, support, rng: np.random.Generator) -> SparseVector:
    values = rng.standard_normal(len(support))
    # Keep magnitudes away from zero so mu_min stays moderate
    values = np.sign(values) * (np.abs(values) + 0.2)
    values /= np.linalg.norm(values)
    return SparseVector(n, {int(i): float(v) for i, v in zip(support, values)})


def planted_separable_instance(n: int, k: int, ell: int, rng: np.random.Generator,
                               overlap: int = 1) -> MixtureInstance:
    """
    Draw an instance where every component owns at least one private coordinate
    :param n: Ambient dimension
    :param k: Support size of every component
    :param ell: Number of components
    :param rng: The random generator
    :param overlap: Number of coordinates shared by all components (clipped to k - 1)
    :return: A separable instance with Gaussian-valued unit vectors
    """
    if k < 1 or ell < 1:
        raise ConfigError("k and ell must be positive.")
    overlap = min(overlap, k - 1) if ell > 1 else 0
    private = k - overlap
    needed = ell * private + overlap
    if needed > n:
        raise ConfigError(f"Cannot plant {ell} separable {k}-sparse supports in dimension {n}.")
    coords = rng.permutation(n)[:needed]
    shared = list(coords[ell * private:])
    components = []
    for t in range(ell):
        support = sorted(list(coords[t * private:(t + 1) * private]) + shared)
        components.append(random_unit_vector(n, support, rng))
    return MixtureInstance(tuple(components))


def random_grid_vector(n: int, pattern, support, rng: np.random.Generator) -> np.ndarray:
    """
    Place a signed permutation of an integer pattern on the given support coordinates
    """
    pattern = np.asarray(pattern, dtype=np.float64)
    values = rng.permutation(pattern) * rng.choice([-1.0, 1.0], size=len(pattern))
    dense = np.zeros(n)
    dense[np.asarray(support)] = values
    return dense


def planted_grid_pair(n: int, pattern, rng: np.random.Generator, same_support: bool = True) -> MixtureInstance:
    """
    Two unit vectors on the grid 1/norm(pattern), built from signed permutations of an integer pattern
    whose Euclidean norm is an integer (e.g. (3, 4), (1, 2, 2), (2, 3, 6))
    """
    pattern = np.asarray(pattern, dtype=np.float64)
    scale = float(np.linalg.norm(pattern))
    if abs(scale - round(scale)) > GRID_TOL:
        raise ConfigError("The pattern must have an integer Euclidean norm.")
    k = len(pattern)
    support1 = rng.choice(n, size=k, replace=False)
    support2 = support1 if same_support else rng.choice(n, size=k, replace=False)
    while True:
        beta1 = random_grid_vector(n, pattern, support1, rng)
        beta2 = random_grid_vector(n, pattern, support2, rng)
        if not (np.allclose(beta1, beta2) or np.allclose(beta1, -beta2)):
            break
    return MixtureInstance((SparseVector.from_dense(beta1 / scale), SparseVector.from_dense(beta2 / scale)),
                           delta=1.0 / scale)


def enumerate_support_patterns(n: int, max_k: int, ell: int):
    """
    Yield every ordered tuple of ell distinct supports of size <= max_k over [n] satisfying separability
    """
    supports = [s for size in range(1, max_k + 1) for s in combinations(range(n), size)]
    for choice in permutations(supports, ell) if ell > 1 else ((s,) for s in supports):
        sets = [set(s) for s in choice]
        separable = all(sets[t] - set().union(*(sets[u] for u in range(ell) if u != t)) for t in range(ell))
        if separable:
            yield choice


def instance_from_supports(n: int, supports, rng: np.random.Generator) -> MixtureInstance:
    return MixtureInstance(tuple(random_unit_vector(n, list(s), rng) for s in supports))


# ================================================================
# Instance files
# ================================================================
def write_instance(instance: MixtureInstance, path: str) -> None:
    with open(path, 'w', encoding='utf-8') as handle:
        handle.write(f"{instance.n} {instance.ell} {instance.delta!r}\n")
        for beta in instance.components:
            pairs = " ".join(f"{idx}:{beta.entries[idx]!r}" for idx in beta.support)
            handle.write(f"{len(beta.entries)} {pairs}\n")


def read_instance(path: str) -> MixtureInstance:
    """
    Read an instance file
    :param path: Path of the instance file
    :return: The parsed instance
    """
    with open(path, 'r', encoding='utf-8') as handle:
        lines = [line.split() for line in handle if line.strip() and not line.startswith('#')]
    try:
        n, ell, delta = int(lines[0][0]), int(lines[0][1]), float(lines[0][2])
        components = []
        for tokens in lines[1:1 + ell]:
            k = int(tokens[0])
            entries = {}
            for token in tokens[1:]:
                idx, value = token.split(':')
                entries[int(idx)] = float(value)
            if len(entries) != k:
                raise ConfigError(f"Component declares {k} entries but lists {len(entries)}.")
            components.append(SparseVector(n, entries))
    except (IndexError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"Malformed instance file {path}: {exc}") from exc
    if len(components) != ell:
        raise ConfigError(f"Instance file {path} lists {len(components)} components, expected {ell}.")
    return MixtureInstance(tuple(components), delta=delta)
