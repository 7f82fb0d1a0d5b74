"""Figures written next to the text/CSV reports.

Uses the object-oriented Matplotlib API (no pyplot state) with the Agg
canvas, and strips the PNG software tag so reruns give identical files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .corpus import DiagnosticCategory
from .metrics import METRIC_NAMES, ConfusionMatrix2, ConfusionMatrix4


def _new_figure(width=4.0, height=3.4) -> Figure:
    fig = Figure(figsize=(width, height), dpi=100)
    FigureCanvasAgg(fig)
    return fig


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="png", metadata={"Software": None})
    return path


def _heatmap(ax, counts: np.ndarray, labels: Sequence[str]):
    ax.imshow(counts, cmap="Blues", vmin=0, vmax=max(int(counts.max()), 1))
    hi = counts.max() / 2
    for (i, j), c in np.ndenumerate(counts):
        ax.text(j, i, str(c), ha="center", va="center", color="white" if c > hi else "black")
    ax.set_xticks(range(len(labels)), labels, rotation=30, ha="right")
    ax.set_yticks(range(len(labels)), labels)
    ax.set_xlabel("Predicted")
    ax.set_ylabel("Observed")


def plot_confusion4(m: ConfusionMatrix4, path, title="Image-by-image") -> Path:
    fig = _new_figure()
    ax = fig.add_subplot()
    _heatmap(ax, np.array(m.counts), [c.short_name for c in DiagnosticCategory])
    ax.set_title(f"{title} ({m.accuracy})")
    fig.tight_layout()
    return _save(fig, path)


def plot_confusion2(m: ConfusionMatrix2, path, title="Grouped") -> Path:
    fig = _new_figure(3.4, 3.0)
    ax = fig.add_subplot()
    _heatmap(ax, np.array([[m.tn, m.fp], [m.fn, m.tp]]), ["negative", "positive"])
    ax.set_title(f"{title} ({m.tp + m.tn}/{m.total})")
    fig.tight_layout()
    return _save(fig, path)


def plot_training_curves(report, path) -> Path:
    epochs = [e.epoch for e in report.epochs]
    fig = _new_figure(6.0, 3.0)
    ax1, ax2 = fig.subplots(1, 2)
    ax1.plot(epochs, [e.train_loss for e in report.epochs], label="train")
    ax1.plot(epochs, [e.val_loss for e in report.epochs], label="validation")
    ax1.axvline(report.best_epoch, color="0.6", ls=":", lw=1)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("cross-entropy")
    ax1.legend(frameon=False)
    ax2.plot(epochs, [e.val_acc for e in report.epochs], color="C2")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("validation accuracy")
    ax2.set_ylim(0, 1)
    fig.tight_layout()
    return _save(fig, path)


def plot_agreement(rows, means, path) -> Path:
    """Grouped bars, one group per metric, one bar per user."""
    fig = _new_figure(6.0, 3.2)
    ax = fig.add_subplot()
    x = np.arange(len(METRIC_NAMES))
    width = 0.8 / max(len(rows), 1)
    for k, (label, row) in enumerate(rows):
        ax.bar(x + k * width - 0.4 + width / 2, [float(row[n]) for n in METRIC_NAMES], width, label=label)
    ax.scatter(x, [float(means[n]) for n in METRIC_NAMES], color="black", marker="_", s=300, zorder=3,
               label="mean")
    ax.set_xticks(x, [n.upper() if n in ("ppv", "npv") else n.capitalize() for n in METRIC_NAMES])
    ax.set_ylabel("%")
    ax.set_ylim(0, 105)
    ax.legend(frameon=False, fontsize=7, ncol=2)
    fig.tight_layout()
    return _save(fig, path)
