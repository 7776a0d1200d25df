"""
This script recovers the genre preferences of MovieLens user pairs for a growing number of movies used to count
users per genre, and compares them to the all-dislike baseline (m1 = m2 = 0). Needs ml-latest-small under the data
directory.
"""
import os
import logging

import pandas as pd

from benchmark_config import SEEDS, MOVIELENS_PAIRS, MOVIELENS_MIN_COMMON, MOVIELENS_BUDGETS, DATA_DIR

from movielens import default_paths, ingest_movielens, movielens_experiment
from experiments import emit_results


if __name__ == "__main__":
    # Configure logging
    logging.basicConfig(filename='benchmark_movielens.log', level=logging.INFO,
                        format='%(asctime)s - %(message)s')
    logging.info('Starting benchmark...')

    ratings_path, movies_path = default_paths()
    if not os.path.exists(ratings_path):
        raise SystemExit(f'{ratings_path} not found, set MIXCLASS_DATA_DIR to the directory holding ml-latest-small')

    #  Preference recovery for different numbers of counting movies
    #  =================================================================
    tables = []
    for users in MOVIELENS_PAIRS:
        pref = ingest_movielens(ratings_path, movies_path, users, min_common=MOVIELENS_MIN_COMMON)
        for m1, m2 in MOVIELENS_BUDGETS:
            logging.info('Benchmark started for pair: %s, m1: %d, m2: %d', users, m1, m2)
            tables.append(movielens_experiment(pref, m1, m2, SEEDS))

    emit_results(pd.concat(tables, ignore_index=True), os.path.join(DATA_DIR, 'movielens.csv'))
    #  =================================================================

