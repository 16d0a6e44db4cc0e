"""Figures written to files: attention heatmaps and ablation bar charts."""

from __future__ import annotations

from collections.abc import Sequence
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def attention_heatmaps(before: np.ndarray, after: np.ndarray, tokens: Sequence[str],
                       path, title: str = "") -> Path:
    """Side-by-side first-layer attention without and with the association matrix."""
    path = Path(path)
    n = len(tokens)
    size = max(4.0, 0.35 * n + 2.0)
    fig, axes = plt.subplots(1, 2, figsize=(2 * size, size), constrained_layout=True)
    vmax = float(max(before.max(), after.max()))
    for ax, mat, label in zip(axes, (before, after), ("softmax(QK^T)", "softmax(QK^T * M)")):
        im = ax.imshow(mat, cmap="viridis", vmin=0.0, vmax=vmax)
        ax.set_title(label)
        ax.set_xticks(range(n), tokens, rotation=90, fontsize=7)
        ax.set_yticks(range(n), tokens, fontsize=7)
        ax.set_xlabel("key")
        ax.set_ylabel("query")
    fig.colorbar(im, ax=axes, shrink=0.8)
    if title:
        fig.suptitle(title)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def ablation_bars(summary: Sequence[dict], path, title: str = "F1 by variant") -> Path:
    """Mean F1 per variant with population-std error bars, in table order."""
    path = Path(path)
    names = [row["variant"] for row in summary]
    means = [row["f1"] for row in summary]
    stds = [row["f1_std"] for row in summary]
    fig, ax = plt.subplots(figsize=(max(5.0, 1.3 * len(names)), 4), constrained_layout=True)
    ax.bar(range(len(names)), means, yerr=stds, capsize=4, color="tab:blue")
    ax.set_xticks(range(len(names)), names, rotation=20, ha="right")
    ax.set_ylabel("exact-match F1")
    ax.set_ylim(0.0, 1.05)
    ax.set_title(title)
    for x, m in enumerate(means):
        if np.isfinite(m):
            ax.text(x, m + 0.01, f"{m:.3f}", ha="center", va="bottom", fontsize=8)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
