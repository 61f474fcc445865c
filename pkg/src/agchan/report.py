"""Figure rendering for region reports and metric comparisons.

All figures are written to files (Agg backend); CSV companions carry the
underlying numbers so the plots are reproducible downstream.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .engine import RegionReport, idw_raster
from .raster import RasterGrid, write_agt1


def write_obstruction_report(report: RegionReport, out_dir) -> list[str]:
    """Obstruction-rate CSV + curve figure. Returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    csv_path = out / "obstruction_rates.csv"
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["elev_deg", "obstruction_rate"])
        for el, rate in sorted(report.obstruction_rate_by_elevation.items()):
            w.writerow([el, repr(rate)])
    written.append(str(csv_path))

    fig, ax = plt.subplots(figsize=(6, 4))
    els = sorted(report.obstruction_rate_by_elevation)
    rates = [report.obstruction_rate_by_elevation[e] for e in els]
    ax.plot(els, rates, "o-", color="tab:red")
    ax.set_xlabel("Elevation (deg)")
    ax.set_ylabel("NLOS fraction")
    ax.set_title("Obstruction rate by elevation")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig_path = out / "obstruction_rates.png"
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
    written.append(str(fig_path))
    return written


def write_attenuation_maps(report: RegionReport, bounds, cell_size: float,
                           out_dir) -> list[str]:
    """Per-elevation IDW attenuation rasters (AGT1) and heat-map figures.

    The interpolated surface is a rendering aid: values between samples
    are not physical, only the sampled points are.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for el, (xs, ys, totals) in sorted(report.attenuation_by_elevation.items()):
        surface = idw_raster(xs, ys, totals, bounds, cell_size)
        grid = RasterGrid(
            origin_x=bounds[0], origin_y=bounds[1], cell_size=cell_size,
            width=surface.shape[1], height=surface.shape[0],
            nodata=-9999.0, values=surface,
        )
        agt_path = out / f"attenuation_el{int(round(el))}.agt"
        write_agt1(grid, agt_path)
        written.append(str(agt_path))

        fig, ax = plt.subplots(figsize=(6, 5))
        im = ax.imshow(
            surface,
            extent=(bounds[0], bounds[2], bounds[1], bounds[3]),
            origin="upper", cmap="inferno",
        )
        ax.scatter(xs, ys, s=8, c="cyan", marker=".", label="samples")
        fig.colorbar(im, ax=ax, label="excess loss (dB)")
        ax.set_title(f"Attenuation at {el:g} deg elevation")
        ax.set_xlabel("x (m)")
        ax.set_ylabel("y (m)")
        ax.legend(loc="upper right", fontsize=8)
        fig.tight_layout()
        fig_path = out / f"attenuation_el{int(round(el))}.png"
        fig.savefig(fig_path, dpi=120)
        plt.close(fig)
        written.append(str(fig_path))
    return written


def write_series_comparison(a: np.ndarray, b: np.ndarray, labels, out_path) -> str:
    """Two-series overlay used by the metrics subcommand."""
    fig, ax1 = plt.subplots(figsize=(8, 4))
    ax1.plot(a, color="tab:orange", label=labels[0])
    ax1.set_ylabel(labels[0], color="tab:orange")
    ax2 = ax1.twinx()
    ax2.plot(b, color="tab:green", label=labels[1])
    ax2.set_ylabel(labels[1], color="tab:green")
    ax1.set_xlabel("sample")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return str(out_path)
