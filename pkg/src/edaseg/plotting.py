"""Report figures rendered straight to files (Agg canvas, no pyplot state)."""

from __future__ import annotations

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from edaseg.lanesynth import CLASS_NAMES, COLORMAP

GOLDEN = (np.sqrt(5) - 1.0) / 2.0
STYLE = {
    "font.size": 8,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 7,
    "ytick.labelsize": 7,
    "lines.linewidth": 1.0,
}


def _figure(width=5.0, aspect=GOLDEN):
    import matplotlib

    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(width, width * aspect), dpi=150)
        FigureCanvasAgg(fig)
        ax = fig.add_subplot(111)
    return fig, ax


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    return path


def plot_loss_curve(log, path, window=50):
    """Raw and smoothed training loss against iteration."""
    from edaseg.train import smoothed

    its = np.array([row[0] for row in log])
    loss = np.array([row[2] for row in log])
    fig, ax = _figure()
    ax.plot(its, loss, color="0.75", label="loss")
    ax.plot(its, smoothed(loss, window), color="C0", label=f"mean of last {window}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("cross-entropy")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_stage_costs(reports_by_arch, path):
    """Per-stage MACs (bars) for one or more analyzed architectures."""
    fig, ax = _figure(width=6.0)
    n = len(reports_by_arch)
    width = 0.8 / max(n, 1)
    for k, (name, reports) in enumerate(reports_by_arch.items()):
        xs = np.arange(len(reports)) + k * width
        ax.bar(xs, [r.macs / 1e9 for r in reports], width, label=name)
    first = next(iter(reports_by_arch.values()), [])
    ax.set_xticks(np.arange(len(first)) + 0.4 - width / 2)
    ax.set_xticklabels([r.stage for r in first], rotation=45, ha="right")
    ax.set_ylabel("GMACs")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_latency(bench_reports, path):
    """Per-run latency distribution for each benchmarked architecture."""
    fig, ax = _figure()
    ax.boxplot([r.times_ms for r in bench_reports], showmeans=True)
    ax.set_xticks(range(1, len(bench_reports) + 1))
    ax.set_xticklabels([r.arch for r in bench_reports])
    ax.set_ylabel("ms per image")
    return _save(fig, path)


def plot_class_iou(iou, path):
    """Per-class IoU bars coloured with the label palette; exempt classes are skipped."""
    fig, ax = _figure()
    iou = np.asarray(iou, dtype=float)
    keep = [c for c in range(len(iou)) if np.isfinite(iou[c])]
    ax.bar(range(len(keep)), [iou[c] for c in keep],
           color=[COLORMAP[c] / 255.0 for c in keep], edgecolor="0.2", linewidth=0.5)
    ax.set_xticks(range(len(keep)))
    ax.set_xticklabels([CLASS_NAMES[c] for c in keep], rotation=30, ha="right")
    ax.set_ylim(0, 1)
    ax.set_ylabel("IoU")
    if keep:
        ax.axhline(float(np.mean([iou[c] for c in keep])), color="0.3", ls="--", lw=0.8)
    return _save(fig, path)
