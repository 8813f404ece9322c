"""Figures written next to the JSON/CSV reports (CMC curves, ablation bars, query montages)."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}
# fixed metadata keeps PNG bytes reproducible
_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)


def plot_cmc(curves, path, max_rank=20, title=None):
    """``curves`` maps a label to a CMC array indexed by rank - 1."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        for label, curve in curves.items():
            curve = np.asarray(curve)[:max_rank]
            ax.plot(np.arange(1, curve.size + 1), 100 * curve, marker="o", ms=3, label=label)
        ax.xaxis.set_major_locator(MaxNLocator(integer=True))
        ax.set_xlabel("rank")
        ax.set_ylabel("matching rate (%)")
        ax.set_ylim(0, 100)
        if title:
            ax.set_title(title)
        ax.legend(loc="lower right", frameon=False)
        _save(fig, path)


def plot_ablation(rows, path, metrics=("rank1", "mAP")):
    """Grouped bar chart of ablation rows (dicts with a "row" label and metric values)."""
    labels = [r["row"] for r in rows]
    metrics = [m for m in metrics if all(m in r for r in rows)]
    x = np.arange(len(rows))
    width = 0.8 / max(len(metrics), 1)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        for i, m in enumerate(metrics):
            ax.bar(x + (i - (len(metrics) - 1) / 2) * width, [100 * r[m] for r in rows], width, label=m)
        ax.set_xticks(x)
        ax.set_xticklabels(labels)
        ax.set_ylabel("%")
        ax.set_ylim(0, 100)
        ax.legend(frameon=False, ncol=len(metrics), loc="lower center", bbox_to_anchor=(0.5, 1.0))
        _save(fig, path)


def plot_montage(probe, gallery, correct, path):
    """Probe crop followed by the ranked gallery crops; correct matches framed red."""
    n = 1 + len(gallery)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, n, figsize=(0.8 * n, 2.0))
        axes = np.atleast_1d(axes)
        for ax, img, tag in zip(axes, [probe] + list(gallery), [None] + list(correct)):
            ax.imshow(np.asarray(img, dtype=np.uint8))
            ax.set_xticks([])
            ax.set_yticks([])
            if tag is not None:
                for spine in ax.spines.values():
                    spine.set_visible(True)
                    spine.set_edgecolor("red" if tag else "0.7")
                    spine.set_linewidth(2)
        axes[0].set_title("probe")
        _save(fig, path)
