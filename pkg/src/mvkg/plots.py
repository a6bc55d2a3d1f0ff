"""Figure rendering for training, evaluation, and protocol reports.

All plots go straight to files (Agg backend); no display server needed.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluation import MetricsReport


def plot_training_dynamics(
    reports: list[MetricsReport],
    loss_history: list[float],
    out_path: str,
    hit_k: int = 5,
) -> None:
    """Answer hits and view hits against training step, with the loss curve."""
    steps = [r.step for r in reports]
    hits = [r.hit_at_k.get(hit_k, 0.0) for r in reports]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(steps, hits, marker="o", label=f"answer HIT@{hit_k}")
    if all(r.view_hit_at_k is not None for r in reports):
        ax.plot(
            steps,
            [r.view_hit_at_k for r in reports],
            marker="s",
            label=f"view HIT@{hit_k}",
        )
    ax.set_xlabel("training step")
    ax.set_ylabel(f"HIT@{hit_k}")
    ax.set_ylim(0.0, 1.05)
    ax.legend(loc="lower right")
    if loss_history:
        ax2 = ax.twinx()
        ax2.plot(range(1, len(loss_history) + 1), loss_history, alpha=0.3, color="gray")
        ax2.set_ylabel("training loss")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_structure_breakdown(report: MetricsReport, out_path: str, hit_k: int = 5) -> None:
    """Bar chart of MRR and HIT@K per query structure."""
    tags = list(report.per_structure)
    mrrs = [report.per_structure[t]["mrr"] for t in tags]
    hits = [report.per_structure[t]["hit_at_k"].get(str(hit_k), 0.0) for t in tags]
    x = range(len(tags))
    width = 0.38
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar([i - width / 2 for i in x], mrrs, width, label="MRR")
    ax.bar([i + width / 2 for i in x], hits, width, label=f"HIT@{hit_k}")
    ax.set_xticks(list(x))
    ax.set_xticklabels(tags)
    ax.set_ylim(0.0, 1.05)
    ax.set_xlabel("query structure")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_view_series(
    series: list[tuple[int, MetricsReport]], out_path: str, hit_k: int = 5
) -> None:
    """HIT@K per evaluated view for the unobserved-view protocol."""
    views = [v for v, _ in series]
    hits = [r.hit_at_k.get(hit_k, 0.0) for _, r in series]
    fig, ax = plt.subplots(figsize=(6.5, 4))
    ax.plot(views, hits, marker="o")
    ax.set_xlabel("view index (all past the training pivot)")
    ax.set_ylabel(f"HIT@{hit_k}")
    ax.set_ylim(0.0, 1.05)
    ax.set_xticks(views)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
