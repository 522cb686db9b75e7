"""Matplotlib figures written next to the CSV outputs."""

from __future__ import annotations

from contextlib import contextmanager

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
}
_METADATA = {"Software": None}


@contextmanager
def figure(width=4.5, height=None):
    golden = (np.sqrt(5) - 1.0) / 2.0
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(width, height or width * golden))
        try:
            yield fig, ax
        finally:
            plt.close(fig)


def plot_retention_curves(curves, path, x="ratio") -> None:
    """PSNR against retention ratio (or rate) for one or more RdCurves."""
    with figure() as (fig, ax):
        for c in curves:
            xs = c.ratios if x == "ratio" and c.ratios is not None else c.rates
            ax.plot(xs, c.quality, marker="o", ms=3, lw=1.2, label=c.label or None)
        if x == "ratio":
            ax.set_xlabel("retention ratio")
        else:
            ax.set_xscale("log")  # BD-rate compares curves in log-rate
            ax.set_xlabel("rate")
        ax.set_ylabel("PSNR (dB)")
        if any(c.label for c in curves):
            ax.legend()
        fig.savefig(path, metadata=_METADATA)


def plot_histogram(counts, path, title: str = "") -> None:
    counts = np.asarray(counts)
    bins = len(counts)
    edges = np.arange(bins) / bins
    with figure() as (fig, ax):
        ax.bar(edges, counts, width=1.0 / bins, align="edge", color="0.35", edgecolor="white", lw=0.5)
        ax.set_xlim(0.0, 1.0)
        ax.set_xlabel("importance score")
        ax.set_ylabel("primitives")
        if title:
            ax.set_title(title)
        fig.savefig(path, metadata=_METADATA)


def plot_training_log(rows, path) -> None:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.size == 0:
        return
    with figure(width=6.0) as (fig, ax):
        it = rows[:, 0]
        for col, name in ((1, "render"), (2, "prune"), (3, "entropy"), (4, "total")):
            ax.plot(it, rows[:, col], lw=0.8, label=name)
        ax.set_yscale("log")
        ax.set_xlabel("iteration")
        ax.set_ylabel("loss")
        ax.legend()
        fig.savefig(path, metadata=_METADATA)
