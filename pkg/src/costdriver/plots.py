"""Figure rendering for the report stage.

Renders the same content the plot-data files carry: per-path KPI trends with
standard-error bands, and CUSUM trajectories against their learned
thresholds. Files are written with fixed metadata so identical inputs give
byte-identical images.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .detect import DetectionResult
from .hierarchy import KpiPanel, RATIO_KPIS

_KPI_TITLES = {
    "cost_per_enrollee": "cost / enrollee",
    "unit_price": "unit price",
    "quantity_per_enrollee": "quantity / enrollee",
    "intensity": "intensity",
    "participation": "participation",
    "prevalence": "prevalence",
}

_PNG_METADATA = {"Software": "costdriver"}


def render_kpi_trends(panel: KpiPanel, out_path: str | Path, title: str) -> None:
    """2x3 grid of ratio KPI trends with ~95% bands."""
    periods = np.arange(1, panel.window.periods + 1)
    fig, axes = plt.subplots(2, 3, figsize=(11, 6), sharex=True)
    for ax, kpi in zip(axes.ravel(), RATIO_KPIS):
        values, ses = panel.kpi(kpi)
        ax.plot(periods, values, marker="o", markersize=3, linewidth=1.2, color="#1f6fb4")
        band = 1.96 * ses
        ax.fill_between(periods, values - band, values + band, alpha=0.25, color="#1f6fb4", linewidth=0)
        ax.set_title(_KPI_TITLES[kpi], fontsize=9)
        ax.tick_params(labelsize=8)
        ax.grid(True, alpha=0.3)
    for ax in axes[1]:
        ax.set_xlabel("period", fontsize=8)
    fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(out_path, dpi=110, metadata=_PNG_METADATA)
    plt.close(fig)


def render_cusum(
    result: DetectionResult,
    h_high: float,
    h_low: float,
    out_path: str | Path,
    title: str,
) -> None:
    """Upper/lower CUSUM trajectories with their learned thresholds."""
    t = np.arange(1, len(result.upper) + 1)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(t, result.upper, marker="o", markersize=3, color="#c23b22", label="upper CUSUM")
    ax.plot(t, result.lower, marker="o", markersize=3, color="#1f6fb4", label="lower CUSUM")
    ax.axhline(h_high, color="#c23b22", linestyle="--", linewidth=1, label="high threshold")
    ax.axhline(-h_low, color="#1f6fb4", linestyle="--", linewidth=1, label="low threshold")
    ax.axhline(0.0, color="black", linewidth=0.6)
    for crossing, color in ((result.first_crossing_up, "#c23b22"), (result.first_crossing_down, "#1f6fb4")):
        if crossing is not None:
            ax.axvline(crossing, color=color, linestyle=":", linewidth=1)
    ax.set_xlabel("year-over-year period", fontsize=9)
    ax.set_ylabel("cumulative standardized change", fontsize=9)
    ax.tick_params(labelsize=8)
    ax.legend(fontsize=7, loc="best")
    ax.grid(True, alpha=0.3)
    fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(out_path, dpi=110, metadata=_PNG_METADATA)
    plt.close(fig)
