"""Report figures written next to the delimited evaluation output."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

GOLDEN = (math.sqrt(5) - 1.0) / 2.0


def get_plot(width: float = 6.0, height: float | None = None):
    fig, ax = plt.subplots(figsize=(width, height or width * GOLDEN), facecolor="w")
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    return fig, ax


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_metrics(reports: Mapping[str, "object"], path: str | Path) -> Path:
    """Grouped bars of recall@k and MRR, one group per metric and one bar per run."""
    names = list(reports)
    ks = sorted({k for r in reports.values() for k in r.recall_at})
    metrics = [f"R@{k}" for k in ks] + ["MRR"]
    fig, ax = get_plot()
    width = 0.8 / max(len(names), 1)
    for i, name in enumerate(names):
        r = reports[name]
        values = [r.recall_at.get(k, 0.0) for k in ks] + [r.mrr]
        xs = [j + i * width - 0.4 + width / 2 for j in range(len(metrics))]
        bars = ax.bar(xs, values, width=width, label=name)
        for b, v in zip(bars, values):
            ax.annotate(f"{v:.3f}", (b.get_x() + b.get_width() / 2, v), ha="center", va="bottom", fontsize=7)
    ax.set_xticks(range(len(metrics)))
    ax.set_xticklabels(metrics)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("score")
    if len(names) > 1:
        ax.legend(frameon=False)
    return _save(fig, path)


def plot_paired_rr(rr_a: Sequence[float], rr_b: Sequence[float], labels: tuple[str, str], path: str | Path) -> Path:
    """Per-task reciprocal ranks of two runs against each other."""
    fig, ax = get_plot(4.5, 4.5)
    ax.scatter(rr_b, rr_a, s=14, alpha=0.6)
    ax.plot([0, 1], [0, 1], color="grey", lw=0.8, ls="--")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel(f"reciprocal rank ({labels[1]})")
    ax.set_ylabel(f"reciprocal rank ({labels[0]})")
    return _save(fig, path)
