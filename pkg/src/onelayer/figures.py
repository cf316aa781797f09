"""File-rendered figures for the experiment grids."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def rate_heatmap(d_values, n_values, cell_map, path, title="", vmin=None, vmax=None,
                 dark_cells=()):
    """Grey-scale (n x d) heatmap; cells in ``dark_cells`` render black."""
    d_values, n_values = list(d_values), list(n_values)
    grid = np.full((len(n_values), len(d_values)), np.nan)
    for (d, n), val in cell_map.items():
        if d in d_values and n in n_values:
            grid[n_values.index(n), d_values.index(d)] = val
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(grid, origin="lower", cmap="gray", aspect="auto", vmin=vmin, vmax=vmax)
    for d, n in dark_cells:
        if d in d_values and n in n_values:
            ax.add_patch(plt.Rectangle(
                (d_values.index(d) - 0.5, n_values.index(n) - 0.5), 1, 1, color="black"))
    ax.set_xticks(range(len(d_values)), [str(d) for d in d_values])
    ax.set_yticks(range(len(n_values)), [str(n) for n in n_values])
    ax.set_xlabel("d")
    ax.set_ylabel("n")
    ax.set_title(title)
    fig.colorbar(im, ax=ax)
    _save(fig, path)


def convergence_plot(traces, path, title="objective vs. iterations"):
    fig, ax = plt.subplots(figsize=(5, 4))
    for name, risks in traces.items():
        risks = np.maximum(np.asarray(risks, dtype=float), 1e-300)
        ax.semilogy(np.arange(len(risks)), risks, label=name)
    ax.set_xlabel("iteration")
    ax.set_ylabel("objective")
    ax.set_title(title)
    ax.legend()
    _save(fig, path)


def trace_plot(values, path, ylabel, logy=True):
    fig, ax = plt.subplots(figsize=(5, 4))
    plot = ax.semilogy if logy else ax.plot
    plot(np.arange(len(values)), values)
    ax.set_xlabel("iteration")
    ax.set_ylabel(ylabel)
    _save(fig, path)


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
