"""Per-pixel terrain derivatives and Weiss landform classification.

Fixed method choices for reproducibility: Horn 3x3 finite differences for
slope/aspect, 3x3 max-min roughness, negated 4-neighbor Laplacian for
curvature (negative = concave), annulus-mean TPI, and RMS-neighbor TRI.
Aspect is the compass direction of steepest ascent (east = 90 deg).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import RasterValidationError
from .raster import RasterGrid


class WeissClass(IntEnum):
    VALLEY = 0
    LOWER_SLOPE = 1
    FLAT = 2
    MIDDLE_SLOPE = 3
    UPPER_SLOPE = 4
    RIDGE = 5


@dataclass
class TerrainDerivatives:
    """Derivative layers sharing the source DEM's grid geometry.

    aspect_deg is NaN where the surface is flat (see flat mask);
    low_support flags pixels computed from fewer than 4 valid neighbors.
    """

    grid: RasterGrid  # source DEM (geometry reference)
    slope_deg: np.ndarray
    aspect_deg: np.ndarray
    flat: np.ndarray
    roughness: np.ndarray
    curvature: np.ndarray
    tpi: np.ndarray
    tri: np.ndarray
    low_support: np.ndarray

    def layer_grid(self, name: str) -> RasterGrid:
        """Wrap one layer as a RasterGrid for export."""
        arr = getattr(self, name)
        vals = np.where(np.isfinite(arr), arr, -9999.0)
        g = self.grid
        return RasterGrid(g.origin_x, g.origin_y, g.cell_size, g.width, g.height, -9999.0, vals)


def _shifted(values: np.ndarray, dr: int, dc: int) -> np.ndarray:
    """Neighbor layer at offset (dr, dc); out-of-grid cells are NaN."""
    h, w = values.shape
    out = np.full((h, w), np.nan)
    rs = slice(max(dr, 0), h + min(dr, 0))
    rd = slice(max(-dr, 0), h + min(-dr, 0))
    cs = slice(max(dc, 0), w + min(dc, 0))
    cd = slice(max(-dc, 0), w + min(-dc, 0))
    out[rd, cd] = values[rs, cs]
    return out


def derive_terrain(dem: RasterGrid) -> TerrainDerivatives:
    if dem.width < 3 or dem.height < 3:
        raise RasterValidationError(
            f"DEM must be at least 3x3 for derivatives, got {dem.height}x{dem.width}"
        )
    z = np.where(dem.valid_mask(), dem.values, np.nan)
    cell = dem.cell_size

    # 8 neighbors; row 0 is north, so dr=-1 moves north.
    nw, n, ne = _shifted(z, -1, -1), _shifted(z, -1, 0), _shifted(z, -1, 1)
    w_, e = _shifted(z, 0, -1), _shifted(z, 0, 1)
    sw, s, se = _shifted(z, 1, -1), _shifted(z, 1, 0), _shifted(z, 1, 1)
    neighbors = np.stack([nw, n, ne, w_, e, sw, s, se])

    # Horn gradients with nodata-aware fallback: missing corner/edge values
    # are substituted by the center (ESRI convention for borders).
    def fill(a):
        return np.where(np.isnan(a), z, a)

    nwf, nf, nef = fill(nw), fill(n), fill(ne)
    wf, ef = fill(w_), fill(e)
    swf, sf, sef = fill(sw), fill(s), fill(se)

    gx = ((nef + 2 * ef + sef) - (nwf + 2 * wf + swf)) / (8.0 * cell)
    gy = ((nwf + 2 * nf + nef) - (swf + 2 * sf + sef)) / (8.0 * cell)

    slope = np.degrees(np.arctan(np.hypot(gx, gy)))
    flat = np.hypot(gx, gy) < 1e-12
    aspect = np.degrees(np.arctan2(gx, gy)) % 360.0
    aspect = np.where(flat, np.nan, aspect)

    valid_n = ~np.isnan(neighbors)
    n_valid = valid_n.sum(axis=0)

    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN ring at corners
        nmax = np.nanmax(np.concatenate([neighbors, z[None]]), axis=0)
        nmin = np.nanmin(np.concatenate([neighbors, z[None]]), axis=0)
        roughness = nmax - nmin

        lap4 = (fill(n) + fill(s) + fill(e) + fill(w_) - 4.0 * z) / cell**2
        curvature = -lap4

        ring_mean = np.nanmean(neighbors, axis=0)
        tpi = z - ring_mean

        diffsq = (neighbors - z[None]) ** 2
        tri = np.sqrt(np.nanmean(diffsq, axis=0))

    nanmask = np.isnan(z)
    for arr in (slope, aspect, roughness, curvature, tpi, tri):
        arr[nanmask] = np.nan
    flat = flat & ~nanmask
    low_support = (n_valid < 4) & ~nanmask

    return TerrainDerivatives(
        grid=dem, slope_deg=slope, aspect_deg=aspect, flat=flat,
        roughness=roughness, curvature=curvature, tpi=tpi, tri=tri,
        low_support=low_support,
    )


def tpi_at_radius(dem: RasterGrid, radius_px: int) -> np.ndarray:
    """TPI from an annulus of cells at Chebyshev distance 1..radius_px."""
    if radius_px < 1:
        raise ValueError("radius must be >= 1")
    z = np.where(dem.valid_mask(), dem.values, np.nan)
    acc = np.zeros_like(z)
    cnt = np.zeros_like(z)
    for dr in range(-radius_px, radius_px + 1):
        for dc in range(-radius_px, radius_px + 1):
            if dr == 0 and dc == 0:
                continue
            nb = _shifted(z, dr, dc)
            good = ~np.isnan(nb)
            acc[good] += nb[good]
            cnt[good] += 1
    with np.errstate(invalid="ignore"):
        mean = np.where(cnt > 0, acc / np.maximum(cnt, 1), np.nan)
    return z - mean


def _standardize(layer: np.ndarray) -> np.ndarray:
    v = layer[np.isfinite(layer)]
    if v.size == 0:
        return np.zeros_like(layer)
    sd = float(np.std(v))
    if sd < 1e-12:
        return np.zeros_like(layer)
    return (layer - float(np.mean(v))) / sd


def classify_weiss(
    tpi_small: np.ndarray,
    tpi_large: np.ndarray,
    slope_deg: np.ndarray,
    slope_flat_deg: float = 5.0,
) -> np.ndarray:
    """Two-scale TPI landform classes.

    Large-scale TPI beyond +/-1 sigma marks ridges/valleys; near-zero TPI
    with gentle slope is flat; the rest splits into slope positions by the
    small-scale TPI sign. Returns an int array (WeissClass values, -1 where
    any input is invalid).
    """
    if not (tpi_small.shape == tpi_large.shape == slope_deg.shape):
        raise RasterValidationError(
            f"layer geometry mismatch: {tpi_small.shape}, {tpi_large.shape}, {slope_deg.shape}"
        )
    zs = _standardize(tpi_small)
    zl = _standardize(tpi_large)

    out = np.full(tpi_small.shape, -1, dtype=np.int16)
    ok = np.isfinite(tpi_small) & np.isfinite(tpi_large) & np.isfinite(slope_deg)

    ridge = ok & (zl >= 1.0)
    valley = ok & (zl <= -1.0)
    mid = ok & ~ridge & ~valley
    flat = mid & (np.abs(zs) < 1.0) & (slope_deg <= slope_flat_deg)
    upper = mid & ~flat & (zs >= 1.0)
    lower = mid & ~flat & (zs <= -1.0)
    middle = mid & ~flat & ~upper & ~lower

    out[valley] = WeissClass.VALLEY
    out[lower] = WeissClass.LOWER_SLOPE
    out[flat] = WeissClass.FLAT
    out[middle] = WeissClass.MIDDLE_SLOPE
    out[upper] = WeissClass.UPPER_SLOPE
    out[ridge] = WeissClass.RIDGE
    return out
