"""Figure rendering for the command line report path.

Everything here draws onto an Agg canvas and writes straight to disk, so it
works headless. Figures are companions to the delimited outputs, not a
separate data path: they are rendered from the same prediction and aggregate
objects that get serialized.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .inference import MixturePrediction

DPI = 150


def save_curve_figure(pred: MixturePrediction, path: str,
                      exposure_name: str) -> None:
    """Response curve with its pointwise 95% band, standardized x axis."""
    g = pred.axes["grid"]
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.fill_between(g, pred.ci_lo, pred.ci_hi, alpha=0.25, linewidth=0,
                    label="95% pointwise")
    ax.plot(g, pred.f_hat, lw=1.6)
    ax.axhline(0.0, color="0.6", lw=0.7)
    ax.set_xlabel(f"{exposure_name} (standardized)")
    ax.set_ylabel("mixture effect")
    ax.set_title(f"response curve: {exposure_name}")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI, metadata={"Software": None})
    plt.close(fig)


def save_surface_figure(pred: MixturePrediction, path: str,
                        name1: str, name2: str) -> None:
    """Heatmap of the fitted surface for one selected pair."""
    g1, g2 = pred.axes["grid1"], pred.axes["grid2"]
    z = pred.f_hat.reshape(g1.size, g2.size)
    fig, ax = plt.subplots(figsize=(4.6, 3.8))
    pcm = ax.pcolormesh(g2, g1, z, shading="auto", cmap="RdBu_r")
    fig.colorbar(pcm, ax=ax, label="mixture effect")
    ax.set_xlabel(f"{name2} (standardized)")
    ax.set_ylabel(f"{name1} (standardized)")
    ax.set_title(f"interaction surface: {name1} x {name2}")
    fig.tight_layout()
    fig.savefig(path, dpi=DPI, metadata={"Software": None})
    plt.close(fig)


def save_metric_figure(aggregates: list[dict], metric: str, path: str,
                       reference: float | None = None) -> None:
    """Grouped bars of one aggregate metric, scenario cells by method."""
    labels = []
    seen = set()
    for row in aggregates:
        if row["scenario"] not in seen:
            seen.add(row["scenario"])
            labels.append(row["scenario"])
    methods = sorted({row["method"] for row in aggregates})
    width = 0.8 / max(len(methods), 1)
    fig, ax = plt.subplots(figsize=(1.6 + 1.1 * len(labels), 3.2))
    drew = False
    for i, method in enumerate(methods):
        vals, errs, pos = [], [], []
        for l_idx, lab in enumerate(labels):
            row = next((r for r in aggregates
                        if r["scenario"] == lab and r["method"] == method),
                       None)
            if row is None or row.get(f"{metric}_mean") is None:
                continue
            vals.append(row[f"{metric}_mean"])
            errs.append(row.get(f"{metric}_se") or 0.0)
            pos.append(l_idx + (i - (len(methods) - 1) / 2) * width)
        if vals:
            ax.bar(pos, vals, width=width * 0.92, yerr=errs, capsize=2,
                   label=method)
            drew = True
    if reference is not None:
        ax.axhline(reference, color="0.3", lw=0.8, ls="--")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel(metric)
    ax.set_title(metric)
    if drew:
        ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI, metadata={"Software": None})
    plt.close(fig)
