"""
This file contains the configuration for the benchmarks.
"""

# Default parameters
SEEDS = tuple(range(100))
DEFAULT_SPARSITY = 5
DEFAULT_NUM_COMPONENTS = 2
DIMENSIONS = (200, 1000)
NUM_WORKERS = 4

# Gaussian queries per component for the recovery sweep
QUERY_COUNTS = (100, 200, 500, 1000, 2000, 5000)
DEFAULT_EPSILON = 0.1

# MovieLens
MOVIELENS_PAIRS = ((68, 448), (274, 380), (474, 606))
MOVIELENS_MIN_COMMON = 1  # pairs are named explicitly
MOVIELENS_BUDGETS = ((0, 0), (10, 20), (30, 60))  # (m1, m2)

DATA_DIR = './benchmarks/data'
