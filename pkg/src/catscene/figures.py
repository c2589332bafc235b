"""Matplotlib figure rendering for the report paths (saved to files, never shown)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .mapping import BlockMap
from .metrics import MetricReport


def plot_loss_curves(steps: list[dict], path: str | Path) -> None:
    """Per-step loss curves; one line per populated loss column."""
    fig, ax = plt.subplots(figsize=(7, 4))
    xs = [rec["step"] for rec in steps]
    for key in ("loss_c", "loss_s", "loss_g", "loss_all"):
        ys = [rec[key] for rec in steps if key in rec]
        if ys:
            ax.plot(xs[: len(ys)], ys, label=key)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_confusion(report: MetricReport, path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 4.5))
    mat = report.confusion
    im = ax.imshow(mat, cmap="viridis")
    ax.set_xlabel("predicted")
    ax.set_ylabel("ground truth")
    ax.set_title(f"OA {100 * report.oa:.2f}%  BA {100 * report.ba:.2f}%")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_block_map(block_map: BlockMap, path: str | Path) -> None:
    """Color-indexed rendering of the predicted grid with a category legend."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    n = max(block_map.grid.max() + 1, len(block_map.categories))
    cmap = plt.get_cmap("tab20", max(n, 2))
    ax.imshow(block_map.grid, cmap=cmap, vmin=0, vmax=max(n - 1, 1), interpolation="nearest")
    handles = [
        plt.Rectangle((0, 0), 1, 1, color=cmap(i)) for i, _name in block_map.categories
    ]
    labels = [name for _i, name in block_map.categories]
    if labels:
        ax.legend(handles, labels, loc="center left", bbox_to_anchor=(1.02, 0.5), fontsize=8)
    ax.set_xticks(range(block_map.cols))
    ax.set_yticks(range(block_map.rows))
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_attention(weights: dict[str, np.ndarray], grid_size: int, path: str | Path) -> None:
    """Head-averaged fusion attention over context tokens as spatial heatmaps.

    Only levels whose key/value count equals grid_size**2 render spatially;
    others are shown as flat bar profiles.
    """
    fig, axes = plt.subplots(1, len(weights), figsize=(4 * len(weights), 3.5))
    if len(weights) == 1:
        axes = [axes]
    for ax, (level, w) in zip(axes, weights.items()):
        mean = w.mean(axis=(0, 1))  # average heads and queries
        if mean.size == grid_size**2:
            im = ax.imshow(mean.reshape(grid_size, grid_size), cmap="magma")
            fig.colorbar(im, ax=ax)
        else:
            ax.bar(range(mean.size), mean)
        ax.set_title(level)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_score_bars(scores: dict[str, float], path: str | Path, ylabel: str = "balanced accuracy") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    names = list(scores)
    ax.bar(names, [scores[n] for n in names])
    ax.set_ylabel(ylabel)
    ax.set_ylim(0, 1)
    plt.setp(ax.get_xticklabels(), rotation=20, ha="right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
