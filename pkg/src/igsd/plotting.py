"""Figures for training curves and sweeps, written straight to image files."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.color": "0.9",
    "font.size": 9,
    "figure.dpi": 120,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_curves(runs: dict, path, keys: Sequence[str] = ("loss",), title: str = "") -> Path:
    """One panel per metric key; one line per run (``label -> list of epoch records``)."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(keys), figsize=(3.6 * len(keys), 2.8), squeeze=False)
        for ax, key in zip(axes[0], keys):
            for label, records in runs.items():
                pts = [(r["epoch"], r[key]) for r in records if r.get(key) is not None]
                if pts:
                    ax.plot(*zip(*pts), label=str(label), lw=1.2)
            ax.set_xlabel("epoch")
            ax.set_ylabel(key)
        if len(runs) > 1:
            axes[0][-1].legend(frameon=False, fontsize=7)
        if title:
            fig.suptitle(title)
        return _save(fig, path)


def plot_sweep(rows: Sequence[dict], path, x: str = "batch_size", y: str = "accuracy_mean",
               err: str = "accuracy_std") -> Path:
    """Mean with a std error bar per sweep value, x on a log2 axis."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 2.8))
        xs = [r[x] for r in rows]
        ax.errorbar(xs, [r[y] for r in rows], yerr=[r.get(err) or 0.0 for r in rows],
                    marker="o", capsize=3, lw=1.2)
        ax.set_xscale("log", base=2)
        ax.set_xticks(xs, [str(v) for v in xs])
        ax.set_xlabel(x.replace("_", " "))
        ax.set_ylabel(y.replace("_", " "))
        return _save(fig, path)
