"""Matplotlib renderings written next to the delimited report files."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_loss_curves(loss_rows, path) -> None:
    """loss_rows: (iteration, total, l_s, l_r) tuples from a training run."""
    rows = np.asarray(loss_rows, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(rows[:, 0], rows[:, 1], label="total", lw=1.0)
    ax.plot(rows[:, 0], rows[:, 2], label="dice", lw=0.8, alpha=0.8)
    if np.any(rows[:, 3] > 0):
        ax2 = ax.twinx()
        ax2.plot(rows[:, 0], rows[:, 3], label="consistency", lw=0.8,
                 color="tab:green", alpha=0.6)
        ax2.set_ylabel("consistency loss")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_metric_bars(ids, reports, path) -> None:
    """Grouped per-image bars for F1 / AUC / ACC plus the mean."""
    ids = list(ids) + ["mean"]
    f1 = [r.f1 for r in reports]
    auc = [0.0 if r.auc is None else r.auc for r in reports]
    acc = [r.acc for r in reports]
    f1.append(float(np.mean(f1)))
    auc.append(float(np.mean(auc)))
    acc.append(float(np.mean(acc)))
    x = np.arange(len(ids))
    width = 0.27
    fig, ax = plt.subplots(figsize=(max(6, 0.5 * len(ids)), 4))
    ax.bar(x - width, f1, width, label="F1")
    ax.bar(x, auc, width, label="AUC")
    ax.bar(x + width, acc, width, label="ACC")
    ax.set_xticks(x)
    ax.set_xticklabels(ids, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("percent")
    ax.set_ylim(0, 105)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_memory_scaling(rows, path) -> None:
    """Peak transient volume bytes against filter size."""
    ds = [r.d_filter for r in rows]
    peaks = [r.peak_volume_bytes / 2**20 for r in rows]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar([str(d) for d in ds], peaks, color="tab:blue")
    ax.set_xlabel("filter size D")
    ax.set_ylabel("peak volume buffer (MiB)")
    for i, p in enumerate(peaks):
        ax.text(i, p, f"{p:.2f}", ha="center", va="bottom", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
