"""Figure rendering for the report paths.

Every analysis/report command writes its delimited output first and then a
matching figure next to it; all rendering goes through the Agg backend so
the CLI works headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def plot_loss_history(history: list[dict], path: str | Path, title: str = "adaptation loss"):
    steps = [h["step"] for h in history]
    fig, ax = plt.subplots(figsize=(7, 4))
    for key in ("total", "mlm", "match", "cliptc", "loss"):
        if history and key in history[0]:
            ax.plot(steps, [h[key] for h in history], label=key)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_metric_history(history: list[dict], path: str | Path, metric: str):
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [h["epoch"] for h in history]
    ax.plot(epochs, [h["dev_metric"] for h in history], marker="o")
    ax.set_xlabel("epoch")
    ax.set_ylabel(metric)
    ax.set_title(f"dev {metric} per epoch")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_grounded_boxes(ratios_by_category: dict[str, list[float]], path: str | Path):
    """Box plot of visually-grounded ratios per performance category, with
    the mean marked."""
    cats = [c for c in ("Improved", "OnPar", "Worsened") if c in ratios_by_category]
    cats += [c for c in ratios_by_category if c not in cats]
    data = [ratios_by_category[c] for c in cats]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.boxplot(data, tick_labels=cats, showmeans=True)
    ax.set_ylabel("visually-grounded ratio")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_attention_heatmap(
    probs: np.ndarray,
    row_tokens: list[str],
    col_tokens: list[str],
    path: str | Path,
    title: str = "",
):
    fig, ax = plt.subplots(figsize=(max(4, 0.25 * probs.shape[1]), max(3, 0.25 * probs.shape[0])))
    im = ax.imshow(probs, aspect="auto", cmap="viridis")
    ax.set_xticks(range(len(col_tokens)))
    ax.set_xticklabels(col_tokens, rotation=90, fontsize=6)
    ax.set_yticks(range(len(row_tokens)))
    ax.set_yticklabels(row_tokens, fontsize=6)
    if title:
        ax.set_title(title, fontsize=9)
    fig.colorbar(im, ax=ax, fraction=0.03)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_pwcca_bars(scores: dict[str, float], path: str | Path):
    fig, ax = plt.subplots(figsize=(6, 4))
    names = list(scores)
    ax.bar(names, [scores[n] for n in names])
    ax.set_ylabel("PWCCA")
    ax.set_ylim(0, 1)
    for i, n in enumerate(names):
        ax.text(i, scores[n] + 0.01, f"{scores[n]:.4f}", ha="center", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
