"""Figures written next to the text reports: training curves and confusion matrices."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "dtvit",
}

# keep PNGs byte-stable across runs
_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=120, metadata=_META, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_history(history: Sequence[dict], path) -> Path:
    """Loss and accuracy curves per epoch, train vs validation."""
    epochs = [r["epoch"] for r in history]
    with plt.rc_context(RC):
        fig, (ax_l, ax_a) = plt.subplots(1, 2, figsize=(8, 3.2))
        ax_l.plot(epochs, [r["train_loss"] for r in history], "o-", ms=3, label="train")
        if any(r.get("val_loss") is not None for r in history):
            ax_l.plot(epochs, [r["val_loss"] for r in history], "s--", ms=3, label="val")
        ax_l.set_xlabel("epoch")
        ax_l.set_ylabel("combined loss")
        ax_l.legend(frameon=False)

        styles = {
            "train_acc_presence": ("C0", "-", "train presence"),
            "train_acc_location": ("C1", "-", "train location"),
            "val_acc_presence": ("C0", "--", "val presence"),
            "val_acc_location": ("C1", "--", "val location"),
        }
        for key, (color, ls, label) in styles.items():
            vals = [r.get(key) for r in history]
            if all(v is not None for v in vals):
                ax_a.plot(epochs, vals, color=color, ls=ls, marker="o", ms=3, label=label)
        ax_a.set_xlabel("epoch")
        ax_a.set_ylabel("accuracy")
        ax_a.set_ylim(0, 1.02)
        ax_a.legend(frameon=False, loc="lower right")
        fig.tight_layout()
        return _save(fig, path)


def plot_confusions(matrices: Sequence, names: Sequence[Sequence[str]], titles: Sequence[str], path) -> Path:
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, len(matrices), figsize=(3.6 * len(matrices), 3.2))
        if len(matrices) == 1:
            axes = [axes]
        for ax, cm, labels, title in zip(axes, matrices, names, titles):
            counts = cm.counts
            ax.imshow(counts, cmap="Blues")
            ax.set_xticks(range(len(labels)), labels, rotation=30, ha="right")
            ax.set_yticks(range(len(labels)), labels)
            ax.set_xlabel("predicted")
            ax.set_ylabel("true")
            ax.set_title(title)
            peak = counts.max() if counts.size else 0
            for i in range(counts.shape[0]):
                for j in range(counts.shape[1]):
                    ax.text(j, i, str(counts[i, j]), ha="center", va="center",
                            color="white" if peak and counts[i, j] > 0.6 * peak else "black")
        fig.tight_layout()
        return _save(fig, path)
