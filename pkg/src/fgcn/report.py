"""Machine-parseable text reports and the figures rendered alongside them.

Text outputs are key=value lines and tab-separated tables with fixed field
order and formatting, so identical runs produce byte-identical files.
Figures are PNGs written through the Agg backend with the embedded
timestamp suppressed, keeping them reproducible too. Nothing here affects
computation; commands call in with finished results.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

_SAVE = {"metadata": {"Date": None}}


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def format_epoch_record(record):
    parts = [f"epoch={record['epoch']}",
             f"lr={record['lr']!r}",
             f"train_loss={record['train_loss']:.6f}",
             f"train_acc={record['train_acc']:.6f}"]
    return " ".join(parts)


def write_train_log(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(format_epoch_record(record) + "\n")


def write_key_values(path, pairs, header=None):
    """Write an ordered iterable of (key, value) pairs, one per line."""
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write(f"# {header}\n")
        for key, value in pairs:
            fh.write(f"{key}={_fmt(value)}\n")


def write_tsv(path, columns, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(v) for v in row) + "\n")


def write_stage_table(path, stage_accuracies, fused_accuracy):
    rows = [(t + 1, acc) for t, acc in enumerate(stage_accuracies)]
    rows.append(("fused", fused_accuracy))
    write_tsv(path, ("stage", "accuracy"), rows)


def write_confusion(path, confusion):
    classes = range(confusion.shape[0])
    rows = [(truth,) + tuple(int(v) for v in confusion[truth]) for truth in classes]
    write_tsv(path, ("true\\pred",) + tuple(str(c) for c in classes), rows)


# ---------------------------------------------------------------------------
# figures


def render_training_curves(path, records, title="training"):
    epochs = [r["epoch"] for r in records]
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax_loss.plot(epochs, [r["train_loss"] for r in records], color="tab:red")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss")
    ax_loss.grid(alpha=0.3)
    ax_acc.plot(epochs, [r["train_acc"] for r in records], color="tab:blue")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("train accuracy")
    ax_acc.set_ylim(-0.02, 1.02)
    ax_acc.grid(alpha=0.3)
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def render_stage_accuracy(path, stage_accuracies, fused_accuracy, title="early predictions"):
    stages = list(range(1, len(stage_accuracies) + 1))
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    ax.plot(stages, stage_accuracies, marker="o", label="stage prediction")
    ax.axhline(fused_accuracy, color="tab:green", linestyle="--", label="fused")
    ax.set_xlabel("stage")
    ax.set_ylabel("accuracy")
    ax.set_xticks(stages)
    ax.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    ax.legend()
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def render_confusion(path, confusion, title="confusion"):
    fig, ax = plt.subplots(figsize=(4.4, 3.8))
    image = ax.imshow(confusion, cmap="Blues")
    ax.set_xlabel("predicted class")
    ax.set_ylabel("true class")
    ax.set_title(title)
    for i in range(confusion.shape[0]):
        for j in range(confusion.shape[1]):
            ax.text(j, i, str(int(confusion[i, j])), ha="center", va="center",
                    color="black", fontsize=8)
    fig.colorbar(image, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def render_sweep(path, xlabel, xs, accuracies, title):
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    ax.plot(xs, accuracies, marker="s", color="tab:purple")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("held-out accuracy")
    ax.set_xticks(xs)
    ax.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
