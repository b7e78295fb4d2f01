"""Matplotlib figure builders for explanation artifacts.

Figures are saved as SVG with a fixed hash salt and no date metadata so
repeated exports are byte-identical.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "svg.hashsalt": "calm",
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}

POS_COLOR = "#c0392b"
NEG_COLOR = "#2471a3"


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None}, bbox_inches="tight")
    plt.close(fig)
    return path


def hbar(labels: Sequence[str], values: Sequence[float], path: str | Path, *, title: str = "",
         xlabel: str = "", signed: bool = False) -> Path:
    """Horizontal bars, first label on top."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 0.35 * len(labels) + 1.0))
        ys = list(range(len(labels)))[::-1]
        colors = [POS_COLOR if (v >= 0 or not signed) else NEG_COLOR for v in values]
        ax.barh(ys, values, color=colors)
        ax.set_yticks(ys, labels)
        if signed:
            ax.axvline(0.0, color="0.3", lw=0.8)
        ax.set_xlabel(xlabel)
        ax.set_title(title)
        return _save(fig, path)


def point_curve(values: Sequence[str], scores: Sequence[float], path: str | Path, *,
                highlight: Sequence[int] = (), title: str = "", ylabel: str = "risk score") -> Path:
    """Risk score per feature value, ordered along x; highlighted points drawn larger."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.45 * len(values) + 1.5), 3.2))
        xs = range(len(values))
        ax.plot(xs, scores, color="0.6", lw=0.8)
        ax.scatter(xs, scores, s=14, color="0.4", zorder=2)
        if highlight:
            ax.scatter([xs[k] for k in highlight], [scores[k] for k in highlight], s=40,
                       color=POS_COLOR, zorder=3)
        ax.axhline(0.0, color="0.3", lw=0.6, ls=":")
        ax.set_xticks(list(xs), values, rotation=60, ha="right")
        ax.set_xlabel("feature value")
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        return _save(fig, path)


def heatmap(row_labels: Sequence[str], col_labels: Sequence[str], grid, path: str | Path, *,
            title: str = "", xlabel: str = "", ylabel: str = "") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(0.5 * len(col_labels) + 2.5, 0.4 * len(row_labels) + 1.5))
        lim = max(1e-12, max(abs(float(v)) for row in grid for v in row))
        im = ax.imshow(grid, cmap="RdBu_r", vmin=-lim, vmax=lim, aspect="auto")
        ax.set_xticks(range(len(col_labels)), col_labels, rotation=60, ha="right")
        ax.set_yticks(range(len(row_labels)), row_labels)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        fig.colorbar(im, ax=ax, label="pair risk score")
        return _save(fig, path)
