"""
This script measures how the relative Hamming distance of the recovered support matrix falls as the number of
RUFF rows grows, for planted two-component mixtures of different dimensions. The results are saved as CSV and
plot data.
"""
import os
import time
import logging

from benchmark_config import SEEDS, DEFAULT_SPARSITY, DEFAULT_NUM_COMPONENTS, DIMENSIONS, NUM_WORKERS, DATA_DIR

from experiments import SUPPORT_SIM, ExperimentConfig, emit_results, run_support_trials


def start_benchmark(n: int) -> None:
    """
    Start the support recovery sweep for one dimension
    :param n: The dimension
    """
    logging.info('Benchmark started for n: %d, k: %d, ell: %d', n, DEFAULT_SPARSITY, DEFAULT_NUM_COMPONENTS)
    cfg = ExperimentConfig(SUPPORT_SIM, n=n, k=DEFAULT_SPARSITY, ell=DEFAULT_NUM_COMPONENTS, seeds=SEEDS,
                           workers=NUM_WORKERS)
    start_time = time.perf_counter()
    table = run_support_trials(cfg)
    logging.info('Finished n: %d in %.1f s', n, time.perf_counter() - start_time)
    emit_results(table, os.path.join(DATA_DIR, f'support_sim_n{n}.csv'))


if __name__ == "__main__":
    # Configure logging
    logging.basicConfig(filename='benchmark_support_sim.log', level=logging.INFO,
                        format='%(asctime)s - %(message)s')
    logging.info('Starting benchmark...')

    #  Support recovery for different dimensions
    #  =================================================================
    for n in DIMENSIONS:
        start_benchmark(n)
    #  =================================================================
