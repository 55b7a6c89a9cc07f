"""SVG plot emission for FROC curves and 2-D embeddings."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

import numpy as np  # noqa: E402

from .metrics import CPM_FP_RATES, FrocCurve  # noqa: E402


def save_froc_svg(curve: FrocCurve, path: str | Path, title: str = "FROC") -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5, 4))
    fps = [p[0] for p in curve.points]
    sens = [p[1] for p in curve.points]
    ax.step(fps, sens, where="post")
    for rate in CPM_FP_RATES:
        ax.axvline(rate, color="gray", alpha=0.2, linewidth=0.6)
    ax.set_xscale("log")
    ax.set_xlabel("false positives per unit")
    ax.set_ylabel("sensitivity")
    ax.set_ylim(0, 1.02)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def save_embedding_svg(coords: np.ndarray, labels, path: str | Path,
                       title: str = "embedding") -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5, 5))
    labels = np.asarray(labels)
    for value in np.unique(labels):
        pick = labels == value
        ax.scatter(coords[pick, 0], coords[pick, 1], s=8, alpha=0.7, label=str(value))
    ax.legend(loc="best", fontsize=8)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path
