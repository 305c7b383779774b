"""Matplotlib figure rendering for training histories and evaluation
reports.  Figures are written to files next to the delimited outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def plot_training_history(rows, path: str | Path) -> None:
    """Loss and dev-metric curves, plus subject/object F1 when present."""
    epochs = [r.epoch for r in rows]
    has_f1 = any(r.subject_f1 is not None for r in rows)
    ncols = 2 if has_f1 else 1
    fig, axes = plt.subplots(1, ncols, figsize=(6 * ncols, 4))
    ax = axes[0] if has_f1 else axes
    ax.plot(epochs, [r.train_loss for r in rows], color="tab:red", label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("train loss", color="tab:red")
    twin = ax.twinx()
    twin.plot(epochs, [r.dev_metric for r in rows], color="tab:blue", label="dev metric")
    twin.set_ylabel("dev metric", color="tab:blue")
    ax.set_title("training curves")
    if has_f1:
        ax2 = axes[1]
        ax2.plot(
            epochs,
            [r.subject_f1 if r.subject_f1 is not None else float("nan") for r in rows],
            label="subject F1",
        )
        ax2.plot(
            epochs,
            [r.object_f1 if r.object_f1 is not None else float("nan") for r in rows],
            label="object F1",
        )
        ax2.set_xlabel("epoch")
        ax2.set_ylabel("F1")
        ax2.set_ylim(-0.02, 1.02)
        ax2.legend()
        ax2.set_title("role F1 on dev")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_similarity_scatter(similarities, scores, path: str | Path, r: float | None = None) -> None:
    """Scatter of permuted-document scores against ordering similarity."""
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter(similarities, scores, s=14, alpha=0.6)
    ax.set_xlabel("similarity to original order")
    ax.set_ylabel("coherence score")
    title = "score vs. ordering similarity"
    if r is not None:
        title += f" (r = {r:.3f})"
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
