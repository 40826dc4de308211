"""Static figures rendered next to the delimited outputs.

Everything goes through the Agg backend so the CLI stays headless; figures
are decoration, the CSV/JSON files are the contract.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .trajectory import Trajectory


def _save(fig, path: str | Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)


def save_trajectory_plot(
    traj: Trajectory,
    path: str | Path,
    title: str = "",
    reference: Trajectory | None = None,
):
    """Lines per variable; an optional reference is drawn dashed."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for j in range(traj.dim):
        (line,) = ax.plot(traj.times, traj.states[:, j], label=f"x{j}")
        if reference is not None and j < reference.dim:
            ax.plot(
                reference.times,
                reference.states[:, j],
                linestyle="--",
                color=line.get_color(),
                alpha=0.6,
            )
    ax.set_xlabel("t")
    ax.set_ylabel("state")
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    _save(fig, path)


def save_heatmap(matrix: np.ndarray, path: str | Path, title: str = ""):
    matrix = np.asarray(matrix, dtype=float)
    fig, ax = plt.subplots(figsize=(4.5, 4))
    vmax = max(np.abs(matrix).max(), 1e-12)
    vmin = 0.0 if matrix.min() >= 0 else -vmax
    im = ax.imshow(matrix, cmap="RdBu_r" if vmin < 0 else "viridis", vmin=vmin, vmax=vmax)
    ax.set_xlabel("driver j")
    ax.set_ylabel("effect i")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, fraction=0.046)
    _save(fig, path)


def save_jacobian_timeseries_plot(
    times: np.ndarray, jacobians: np.ndarray, path: str | Path, title: str = ""
):
    """Grid of partial-derivative traces: panel (i, j) shows d f_i / d x_j over t."""
    _, n_out, n_in = jacobians.shape
    fig, axes = plt.subplots(
        n_out, n_in, figsize=(2.2 * n_in, 1.8 * n_out), sharex=True, squeeze=False
    )
    for i in range(n_out):
        for j in range(n_in):
            ax = axes[i][j]
            ax.plot(times, jacobians[:, i, j], lw=1.0)
            ax.axhline(0.0, color="gray", lw=0.5)
            ax.set_title(f"df{i}/dx{j}", fontsize=8)
    for ax in axes[-1]:
        ax.set_xlabel("t", fontsize=8)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    _save(fig, path)


def save_loss_curve(data_losses, penalties, path: str | Path):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.semilogy(data_losses, label="data loss")
    pen = np.asarray(penalties, dtype=float)
    if np.any(pen > 0):
        ax.semilogy(pen, label="path penalty", alpha=0.7)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    _save(fig, path)
