"""Matplotlib figure rendering for the CLI report paths.

Every report command writes its machine-readable output (CSV/PGM) first and
then a rendered PNG next to it via these helpers. Uses the Agg backend so
headless runs work.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

plt.rcParams.update({
    "figure.dpi": 110,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
})


def save_loss_curve(history, path):
    """history: rows of {step, lr, loss[, acc]} from the training loop."""
    steps = [row["step"] for row in history]
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    ax.plot(steps, [row["loss"] for row in history], lw=1.2, label="loss")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax2 = ax.twinx()
    ax2.plot(steps, [row["lr"] for row in history], lw=1.0, color="tab:orange", label="lr")
    ax2.set_ylabel("learning rate")
    ax2.grid(False)
    acc_rows = [(row["step"], row["acc"]) for row in history if "acc" in row]
    if acc_rows:
        xs, ys = zip(*acc_rows)
        ax.plot(xs, ys, "s--", ms=3, color="tab:green", label="seq. accuracy")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_ablation_chart(report, path):
    """Horizontal bars of sequence accuracy per harness row."""
    names = [row["name"] for row in report]
    accs = [row["sequence_accuracy"] for row in report]
    fig, ax = plt.subplots(figsize=(7.2, 0.3 * len(report) + 1.2))
    ypos = np.arange(len(report))
    ax.barh(ypos, accs, color="tab:blue")
    ax.set_yticks(ypos, names)
    ax.invert_yaxis()
    ax.set_xlabel("sequence accuracy (desk-scale synthetic; not comparable to published results)")
    ax.set_xlim(0, 1)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_sweep_curves(cells, path):
    """cells: {"raw": acc, "ha": [6 accs], "ca": [6 accs]} accuracy sweep."""
    levels = np.arange(1, 7)
    fig, ax = plt.subplots(figsize=(5.6, 3.6))
    ax.plot(levels, cells["ha"], "o-", label="horizontal")
    ax.plot(levels, cells["ca"], "s-", label="curved")
    ax.axhline(cells["raw"], color="gray", ls="--", lw=1, label="raw")
    ax.set_xlabel("deformation intensity level")
    ax.set_ylabel("sequence accuracy")
    ax.set_xticks(levels)
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_attention_panel(text, heatmaps, affinity, path):
    """Per-step visual attention grids plus the semantic affinity matrix."""
    n = len(heatmaps)
    cols = max(n, 1)
    fig, axes = plt.subplots(2, cols, figsize=(1.3 * cols + 2, 4.2), squeeze=False)
    labels = list(text) + ["<end>"]
    for i, hm in enumerate(heatmaps):
        ax = axes[0][i]
        ax.imshow(hm, cmap="viridis", aspect="auto")
        ax.set_title(labels[i] if i < len(labels) else f"step {i + 1}", fontsize=8)
        ax.set_xticks([])
        ax.set_yticks([])
        ax.grid(False)
    for j in range(n, cols):
        axes[0][j].axis("off")
    big = axes[1][0]
    for j in range(1, cols):
        axes[1][j].axis("off")
    big.imshow(affinity, cmap="magma")
    big.set_title(f"semantic affinity: {text!r}", fontsize=8)
    big.set_xlabel("attended step")
    big.set_ylabel("decode step")
    big.grid(False)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
