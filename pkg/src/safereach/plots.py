"""Figure rendering for the report and run paths (files only, no GUI)."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .harness import EpisodeLog
from .reachdp import StateGrid, ValueTable


def save_trajectory_figure(log: EpisodeLog, path) -> None:
    """Angle, angular velocity, and control against the step count, with the
    safe-set angle bounds drawn as horizontal lines."""
    steps = [s.step for s in log.steps]
    x1 = [s.state[0] for s in log.steps]
    x2 = [s.state[1] for s in log.steps]
    u = [s.control for s in log.steps]
    cfg = log.config

    fig, axes = plt.subplots(3, 1, sharex=True, figsize=(8, 7))
    axes[0].plot(steps, x1, lw=1.0)
    axes[0].axhline(cfg.safe_box.lower[0], color="red", lw=1.0)
    axes[0].axhline(cfg.safe_box.upper[0], color="red", lw=1.0)
    axes[0].set_ylabel("x1 [rad]")
    axes[1].plot(steps, x2, lw=1.0)
    axes[1].set_ylabel("x2 [rad/s]")
    axes[2].plot(steps, u, lw=1.0)
    axes[2].set_ylabel("u [N]")
    axes[2].set_xlabel("step")
    for k in range(1, cfg.iterations):
        for ax in axes:
            ax.axvline(k * cfg.steps_per_iteration + 0.5, color="gray",
                       lw=0.6, ls=":")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _heatmap(ax, grid: StateGrid, values: np.ndarray, title: str):
    x1, x2 = grid.nodes
    im = ax.pcolormesh(x1, x2, values.T, shading="nearest")
    ax.set_xlabel("x1 [rad]")
    ax.set_ylabel("x2 [rad/s]")
    ax.set_title(title)
    return im


def save_grid_report_figures(report: np.ndarray, grid: StateGrid, outdir) -> list[str]:
    """Heatmaps of the posterior means and log10 variances next to the CSV."""
    import os

    shape = grid.shape
    panels = [
        ("mean1", report[:, 2], "posterior mean, next angle"),
        ("mean2", report[:, 3], "posterior mean, next velocity"),
        ("log10var1", report[:, 6], "log10 variance, next angle"),
        ("log10var2", report[:, 7], "log10 variance, next velocity"),
    ]
    paths = []
    for name, column, title in panels:
        fig, ax = plt.subplots(figsize=(5, 4))
        im = _heatmap(ax, grid, column.reshape(shape), title)
        fig.colorbar(im, ax=ax)
        fig.tight_layout()
        path = os.path.join(outdir, f"{name}.png")
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths


def save_value_figure(table: ValueTable, grid: StateGrid, path,
                      title: str = "reach-avoid value") -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    im = _heatmap(ax, grid, table.values, title)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_policy_figure(controls: np.ndarray, grid: StateGrid, path,
                       title: str = "optimal control") -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    im = _heatmap(ax, grid, controls[..., 0], title)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
