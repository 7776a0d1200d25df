"""
This script plots the support recovery and vector recovery sweeps, and prints the MovieLens table.
"""
import os
import numpy as np
import pandas as pd
import matplotlib.pyplot as plt

try:
    import scienceplots  # noqa: F401
    plt.style.use(['science', 'grid', 'ieee', 'std-colors'])
except ImportError:
    pass

from benchmark_config import DIMENSIONS

TEXT_WIDTH = 234.0 / 72.27  # inches
TEXT_HEIGHT = TEXT_WIDTH * (8/10)


def plot_sweep(data_files, labels, x_label="", y_label="", log_x=False):
    """
    Plot mean (or median) values with their error band for one sweep per file
    :param data_files: Whitespace separated .dat files with columns x, y, error
    :param labels: Legend label of every file
    :param x_label: Label of the x axis
    :param y_label: Label of the y axis
    :param log_x: Use a logarithmic x axis
    :return: The figure
    """
    fig, ax = plt.subplots(1, 1, layout='tight', dpi=300)
    linestyles = ['solid', 'dotted', 'dashed', 'dashdot']
    for i, (path, label) in enumerate(zip(data_files, labels)):
        x, y, err = np.loadtxt(path, ndmin=2).T
        ax.plot(x, y, label=label, linestyle=linestyles[i % len(linestyles)], marker='.')
        ax.fill_between(x, np.maximum(y - err, 0), y + err, alpha=0.2)

    ax.set_xlabel(x_label)
    ax.set_ylabel(y_label)
    if log_x:
        ax.set_xscale('log')
    ax.legend(fontsize=7, loc='upper right')
    fig.tight_layout()
    fig.set_size_inches(TEXT_WIDTH, TEXT_HEIGHT)
    return fig


def main():
    """ Main function """
    workspace_dir = os.path.dirname(os.path.abspath(__file__))
    data_dir = os.path.join(workspace_dir, 'data')
    figure_dir = os.path.join(workspace_dir, 'figures')
    os.makedirs(figure_dir, exist_ok=True)
    labels = [f'$n = {n}$' for n in DIMENSIONS]

    # Relative Hamming distance against the number of RUFF rows
    files = [os.path.join(data_dir, f'support_sim_n{n}.dat') for n in DIMENSIONS]
    if all(os.path.exists(f) for f in files):
        fig = plot_sweep(files, labels, x_label='RUFF rows', y_label='Relative Hamming distance')
        fig.savefig(os.path.join(figure_dir, 'support_sim.pdf'))

    # Largest l2 error against the number of Gaussian queries
    files = [os.path.join(data_dir, f'recovery_n{n}.dat') for n in DIMENSIONS]
    if all(os.path.exists(f) for f in files):
        fig = plot_sweep(files, labels, x_label='Gaussian queries per component', y_label=r'Median $\ell_2$ error',
                         log_x=True)
        fig.axes[0].set_yscale('log')
        fig.savefig(os.path.join(figure_dir, 'recovery.pdf'))

    movielens = os.path.join(data_dir, 'movielens.csv')
    if os.path.exists(movielens):
        table = pd.read_csv(movielens)
        print(table.pivot_table(index=['pair', 'm1', 'm2'], columns='user', sort=False,
                                values=['accuracy', 'precision', 'recall']).round(3).to_string())


if __name__ == "__main__":
    main()
