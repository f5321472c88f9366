"""Figures written next to the CSV reports. Uses the non-interactive Agg backend."""
from pathlib import Path

import numpy as np

METHOD_LABELS = {
    "channel": "channel decomposition",
    "dw": "depth-wise",
    "dw-comp": "depth-wise + compensation",
}
METHOD_COLORS = {"channel": "#7f7f7f", "dw": "#1f77b4", "dw-comp": "#d62728"}

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def figure_path(report_path, suffix=".png"):
    return Path(report_path).with_suffix(suffix)


def plot_sanity(table, path):
    plt = _pyplot()
    rows = list(table.rows())
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 2.6))
        x = np.arange(len(rows))
        means = [r["mean_relative_error"] for r in rows]
        stds = [r["std_relative_error"] for r in rows]
        ax.bar(x, means, yerr=stds, color=[METHOD_COLORS[r["method"]] for r in rows], capsize=3)
        ax.set_xticks(x)
        ax.set_xticklabels([METHOD_LABELS[r["method"]] for r in rows], rotation=15, ha="right")
        lo = min(means) - 3 * max(max(stds), 1e-3)
        ax.set_ylim(max(0.0, lo - 0.01), max(means) + 3 * max(max(stds), 1e-3) + 0.01)
        ax.set_ylabel("relative error")
        ax.set_title(f"single layer, {table.config.speedup:g}x target, {table.config.runs} runs")
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def plot_layerwise(rows, path):
    plt = _pyplot()
    layers = sorted({r.layer_id for r in rows})
    methods = [m for m in METHOD_LABELS if any(r.method == m for r in rows)]
    width = 0.8 / max(len(methods), 1)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(3.6, 0.9 * len(layers) + 1.5), 2.6))
        for j, m in enumerate(methods):
            vals = {r.layer_id: r.relative_error for r in rows if r.method == m}
            xs = np.arange(len(layers)) + (j - (len(methods) - 1) / 2) * width
            ax.bar(xs, [vals.get(l, np.nan) for l in layers], width, label=METHOD_LABELS[m], color=METHOD_COLORS[m])
        ax.set_xticks(np.arange(len(layers)))
        ax.set_xticklabels([str(l) for l in layers])
        ax.set_xlabel("layer")
        ax.set_ylabel("relative error")
        ax.legend(frameon=False, loc="upper left", bbox_to_anchor=(1.0, 1.0))
        fig.savefig(path)
        plt.close(fig)
    return Path(path)
