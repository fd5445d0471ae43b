"""Figures written next to the CSV outputs of the command-line tool.

Rendering uses the non-interactive Agg backend, and PNG metadata is
pinned so repeated runs produce identical files.
"""

from __future__ import annotations

from collections.abc import Sequence
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
WIDTH_IN = 5.5

STYLE = {
    "font.family": "serif",
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
    "lines.markersize": 4,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    "svg.hashsalt": "precoderlab",
}


def size(scale: float = 1.0, ratio: float = GOLDEN) -> tuple[float, float]:
    w = WIDTH_IN * scale
    return w, w * ratio


def new(nrows: int = 1, ncols: int = 1, scale: float = 1.0):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(nrows, ncols, figsize=size(scale))
    return fig, ax


def save(fig, path) -> Path:
    path = Path(path)
    with plt.rc_context(STYLE):
        fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def history_figure(epochs: Sequence[int], loss: Sequence[float], val_ratio: Sequence[float], path) -> Path:
    """Training loss and validation ratio against epoch."""
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=size(1.0, 0.42))
        a1.plot(epochs, loss, color="C0")
        a1.set_xlabel("epoch")
        a1.set_ylabel("loss (negative objective)")
        e = np.asarray(epochs)
        r = np.asarray(val_ratio, dtype=float)
        ok = np.isfinite(r)
        a2.plot(e[ok], r[ok], "o-", color="C1")
        a2.set_xlabel("epoch")
        a2.set_ylabel("validation ratio")
        fig.tight_layout()
    return save(fig, path)


def ratio_histogram(ratios: Sequence[float], path, label: str = "baseline") -> Path:
    """Distribution of per-sample network / baseline ratios."""
    r = np.asarray(ratios, dtype=float)
    r = r[np.isfinite(r)]
    fig, ax = new()
    with plt.rc_context(STYLE):
        span = None
        if r.size and np.ptp(r) <= 1e-9 * max(1.0, abs(r.mean())):
            span = (r.mean() - 0.01, r.mean() + 0.01)  # nearly constant ratios
        ax.hist(r, bins=30, range=span, color="C0", alpha=0.8)
        if r.size:
            ax.axvline(r.mean(), color="C3", ls="--", label=f"mean {r.mean():.3f}")
            ax.legend(frameon=False)
        ax.set_xlabel(f"objective ratio vs {label}")
        ax.set_ylabel("samples")
    return save(fig, path)


def sweep_figure(values: Sequence[int], ratios: Sequence[float], axis: str, path, trained_at: int | None = None) -> Path:
    """Mean ratio against the swept system dimension."""
    fig, ax = new()
    with plt.rc_context(STYLE):
        ax.plot(values, ratios, "o-", color="C0")
        if trained_at is not None:
            ax.axvline(trained_at, color="0.5", ls=":", label="training size")
            ax.legend(frameon=False)
        ax.set_xlabel("users K" if axis == "users" else "antennas N")
        ax.set_ylabel("mean objective ratio")
        ax.set_xticks(list(values))
    return save(fig, path)
