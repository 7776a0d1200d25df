"""
This script measures the largest l2 error of two-stage recovery for a growing number of Gaussian queries per
component. The results are saved as CSV and plot data.
"""
import os
import time
import logging

from benchmark_config import (SEEDS, DEFAULT_SPARSITY, DEFAULT_NUM_COMPONENTS, DIMENSIONS, NUM_WORKERS,
                              QUERY_COUNTS, DEFAULT_EPSILON, DATA_DIR)

from experiments import RECOVERY_SWEEP, ExperimentConfig, emit_results, run_recovery_sweep


if __name__ == "__main__":
    # Configure logging
    logging.basicConfig(filename='benchmark_recovery.log', level=logging.INFO,
                        format='%(asctime)s - %(message)s')
    logging.info('Starting benchmark...')

    #  Recovery error for different numbers of Gaussian queries
    #  =================================================================
    for n in DIMENSIONS:
        logging.info('Benchmark started for n: %d, m: %s', n, QUERY_COUNTS)
        cfg = ExperimentConfig(RECOVERY_SWEEP, n=n, k=DEFAULT_SPARSITY, ell=DEFAULT_NUM_COMPONENTS,
                               epsilon=DEFAULT_EPSILON, seeds=SEEDS, m_values=QUERY_COUNTS, workers=NUM_WORKERS)
        start_time = time.perf_counter()
        table = run_recovery_sweep(cfg)
        logging.info('Finished n: %d in %.1f s', n, time.perf_counter() - start_time)
        emit_results(table, os.path.join(DATA_DIR, f'recovery_n{n}.csv'))
    #  =================================================================
