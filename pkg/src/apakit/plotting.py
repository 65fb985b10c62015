"""Matplotlib figures written next to the text/CSV reports."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_RC = {
    "font.size": 10,
    "axes.labelsize": 10,
    "axes.titlesize": 11,
    "legend.fontsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def pretty_plot(width: float = 8, height: float | None = None):
    golden_ratio = (math.sqrt(5) - 1.0) / 2.0
    if not height:
        height = width * golden_ratio
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(width, height), facecolor="w")
    return fig, ax


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_metric_report(report, path, title: str = "PCC / SCC per cell") -> Path:
    cells = list(report.cells.values())
    labels = [f"{c.granularity}\n{c.aspect}" for c in cells]
    x = range(len(cells))
    w = 0.38
    with plt.rc_context(_RC):
        fig, ax = pretty_plot(max(5.0, 0.9 * len(cells) + 2))
        for offset, attr, name in ((-w / 2, "pcc", "PCC"), (w / 2, "scc", "SCC")):
            vals = [getattr(c, attr).value for c in cells]
            ax.bar([i + offset for i in x], [0.0 if v is None else v for v in vals], w, label=name)
            for i, v in zip(x, vals):
                if v is None:
                    ax.text(i + offset, 0.02, "-", ha="center", va="bottom")
        ax.axhline(0.0, color="k", lw=0.6)
        ax.set_xticks(list(x))
        ax.set_xticklabels(labels)
        ax.set_ylim(min(-0.1, *(getattr(c, a).value or 0.0 for c in cells for a in ("pcc", "scc"))) - 0.05, 1.05)
        ax.set_ylabel("correlation")
        ax.set_title(title)
        ax.legend(loc="lower right")
        return _save(fig, path)


def plot_distribution(hist, path, title: str = "score distribution") -> Path:
    """``hist`` is the ``[(bucket, count), ...]`` list from ``corpus.distribution_report``."""
    with plt.rc_context(_RC):
        fig, ax = pretty_plot(6)
        labels = [str(b) for b, _ in hist]
        counts = [n for _, n in hist]
        bars = ax.bar(labels, counts, color="0.45")
        for bar, n in zip(bars, counts):
            ax.text(bar.get_x() + bar.get_width() / 2, bar.get_height(), str(n), ha="center", va="bottom")
        ax.set_ylabel("utterances")
        ax.set_title(title)
        return _save(fig, path)


def plot_loss_trace(trace, path, title: str = "SimPO + CE training") -> Path:
    steps = [r.step for r in trace]
    with plt.rc_context(_RC):
        fig, ax = pretty_plot(7)
        ax.plot(steps, [r.total for r in trace], label="total", lw=1.6)
        ax.plot(steps, [r.simpo for r in trace], label="SimPO term", lw=1.0)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax2 = ax.twinx()
        ax2.plot(steps, [r.reward_gap for r in trace], color="C3", ls="--", lw=1.0, label="reward gap")
        ax2.set_ylabel("mean r(chosen) - r(rejected)")
        lines = ax.get_lines() + ax2.get_lines()
        ax.legend(lines, [ln.get_label() for ln in lines], loc="center right")
        ax.set_title(title)
        return _save(fig, path)
