"""Report figures written next to the text reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

FIG_DPI = 120
COLORS = {"seen": "#3b6ea5", "rej": "#c0504d", "val": "#c0504d", "train": "#3b6ea5"}


def plot_report(report, path, title=None):
    """Per-class F1 bars and the row-normalised confusion matrix."""
    classes = report.classes
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4.5))

    f1 = [report.per_class_f1[c] for c in classes]
    colors = [COLORS["rej"] if c == "c_rej" else COLORS["seen"] for c in classes]
    ax1.bar(range(len(classes)), f1, color=colors)
    ax1.set_xticks(range(len(classes)))
    ax1.set_xticklabels(classes, rotation=60, ha="right", fontsize=8)
    ax1.set_ylim(0, 1.05)
    ax1.set_ylabel("F1")
    ax1.axhline(report.weighted_f1, color="k", ls="--", lw=1, label=f"weighted {report.weighted_f1:.3f}")
    ax1.axhline(report.macro_f1, color="0.5", ls=":", lw=1, label=f"macro {report.macro_f1:.3f}")
    ax1.legend(loc="lower right", fontsize=8)

    pos = {c: i for i, c in enumerate(classes)}
    mat = np.zeros((len(classes), len(classes)))
    for (g, p), n in report.confusion.items():
        mat[pos[g], pos[p]] += n
    rows = mat.sum(axis=1, keepdims=True)
    norm = np.divide(mat, rows, out=np.zeros_like(mat), where=rows > 0)
    im = ax2.imshow(norm, cmap="Blues", vmin=0, vmax=1)
    ax2.set_xticks(range(len(classes)))
    ax2.set_yticks(range(len(classes)))
    ax2.set_xticklabels(classes, rotation=60, ha="right", fontsize=8)
    ax2.set_yticklabels(classes, fontsize=8)
    ax2.set_xlabel("predicted")
    ax2.set_ylabel("gold")
    fig.colorbar(im, ax=ax2, fraction=0.046, pad=0.04)

    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)


def plot_seen_sizes(summary, path):
    """Weighted and macro F1 against the number of seen classes."""
    sizes = sorted(summary)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for key, style in (("weighted_f1", "o-"), ("macro_f1", "s--")):
        mean = [summary[s][key] for s in sizes]
        std = [summary[s].get(f"{key}_std", 0.0) for s in sizes]
        ax.errorbar(sizes, mean, yerr=std, fmt=style, capsize=3, label=key.replace("_", " "))
    ax.set_xlabel("|S|")
    ax.set_ylabel("F1")
    ax.set_ylim(0, 1.02)
    ax.set_xticks(sizes)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)


def plot_history(history, path):
    epochs = [h["epoch"] for h in history]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(epochs, [h["train_loss"] for h in history], color=COLORS["train"], label="train")
    ax.plot(epochs, [h["val_loss"] for h in history], color=COLORS["val"], label="validation")
    best = min(history, key=lambda h: h["val_loss"])
    ax.axvline(best["epoch"], color="0.5", ls=":", lw=1)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean weighted BCE")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)
