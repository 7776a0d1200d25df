"""
This file contains the default constants of the query designs and estimators.
"""
import math
import os
from dataclasses import dataclass, fields, replace

from errors import ConfigError

# Set family sizes
RUFF_DEGREE_CONSTANT = 8.0       # C_d: d = C_d * t * ln(n) / alpha
RUFF_ALPHABET_CONSTANT = 16.0    # C_m: m = C_m * t^2 * ln(n) / alpha^2
CFF_ALPHABET_CONSTANT = 3 * math.e  # C_c: m = C_c * t^(r+1) * ln(n)
SUPPORT_RUFF_ALPHA = 0.5

# Query counts and batchsizes
GAUSSIAN_QUERY_CONSTANT = 40.0   # C_g: m = C_g * k / eps * ln(k / eps + e)
BATCH_SLACK = 1.0
FAILURE_BUDGET = 0.01

# Forcing entries of modified queries
INF_FACTOR = 10.0
QUERY_MAGNITUDE_BOUND = 6.0

# Exhaustive verification and retries
VERIFY_BUDGET = 50_000_000
CONSTRUCTION_RETRIES = 3

# Advisories and numerics
MAX_ENTRY_WARNING = 0.5
PROJECTION_ZERO_TOL = 1e-9

# Dataset location
DATA_DIR_ENV = "MIXCLASS_DATA_DIR"


@dataclass(frozen=True)
class Constants:
    """
    Overridable constants shared by all recovery stages
    """
    c_d: float = RUFF_DEGREE_CONSTANT
    c_m: float = RUFF_ALPHABET_CONSTANT
    c_c: float = CFF_ALPHABET_CONSTANT
    c_g: float = GAUSSIAN_QUERY_CONSTANT
    batch_slack: float = BATCH_SLACK
    failure_budget: float = FAILURE_BUDGET
    support_alpha: float = SUPPORT_RUFF_ALPHA
    inf_factor: float = INF_FACTOR
    query_bound: float = QUERY_MAGNITUDE_BOUND
    verify_budget: int = VERIFY_BUDGET
    retries: int = CONSTRUCTION_RETRIES

    def __post_init__(self):
        for field in fields(self):
            if getattr(self, field.name) <= 0:
                raise ConfigError(f"Constant {field.name} must be positive.")
        if not 0 < self.failure_budget < 1:
            raise ConfigError("The failure budget must lie in (0, 1).")
        if not 0 < self.support_alpha <= 1:
            raise ConfigError("The RUFF alpha must lie in (0, 1].")

    def with_overrides(self, **overrides) -> "Constants":
        """
        Return a copy with the given constants replaced, ignoring None values
        """
        return replace(self, **{key: value for key, value in overrides.items() if value is not None})


DEFAULT_CONSTANTS = Constants()


def data_dir() -> str:
    """
    :return: The dataset directory from the environment, or the current directory.
    """
    return os.environ.get(DATA_DIR_ENV, os.getcwd())
