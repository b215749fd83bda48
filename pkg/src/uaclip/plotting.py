"""Figures written next to the CSV/JSON reports.

All functions render with the non-interactive Agg backend and save a PNG;
they return the output path.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_PNG_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_training_curve(report, path, label=None):
    """Fixed-partition loss per epoch, with the initial loss at epoch 0."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    losses = [report.initial_loss] + list(report.epoch_losses)
    ax.plot(range(len(losses)), losses, marker="o", ms=3, label=label or "loss")
    ax.plot(range(1, len(losses)), report.train_batch_losses, lw=1, alpha=0.6, label="mean batch loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("bidirectional loss")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_demand_curves(model, path):
    """Single-attribute fitted demand score on [0, 1] with vertices marked."""
    from .demand import NoCurvature, demand_score, vertex

    fig, ax = plt.subplots(figsize=(5, 3.5))
    x = np.linspace(0.0, 1.0, 201)
    zero = {a: 0.0 for a in model.attributes}
    for attr in model.attributes:
        y = [demand_score(model, {**zero, attr: xi}) for xi in x]
        (line,) = ax.plot(x, y, label=attr)
        try:
            v = vertex(model, attr)
        except NoCurvature:
            continue
        if v.in_unit_interval:
            ax.axvline(v.location, color=line.get_color(), ls=":", lw=1)
    ax.set_xlabel("normalized attribute")
    ax.set_ylabel("demand score component")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_occlusion(img, grid, path, title=None):
    """Image and its occlusion heatmap side by side."""
    fig, axes = plt.subplots(1, 2, figsize=(7, 3.5))
    axes[0].imshow(img.pixels, interpolation="nearest")
    axes[0].set_title("image")
    im = axes[1].imshow(grid.deltas, cmap="inferno", interpolation="nearest")
    axes[1].set_title(title or "score drop per patch")
    fig.colorbar(im, ax=axes[1], fraction=0.046)
    for ax in axes:
        ax.set_xticks([])
        ax.set_yticks([])
    return _save(fig, path)


def plot_eval_metrics(rows, path):
    """Bar chart of recall@1 and mean top-1 demand per evaluated encoder."""
    fig, axes = plt.subplots(1, 2, figsize=(7, 3.2))
    names = [r["encoder"] for r in rows]
    axes[0].bar(names, [r["recall_at_1"] for r in rows], color="0.5")
    axes[0].set_ylabel("recall@1")
    axes[1].bar(names, [r["mean_demand"] for r in rows], color="tab:orange")
    axes[1].set_ylabel("mean demand score of top-1")
    return _save(fig, path)
