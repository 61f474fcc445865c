"""Reflection-capability raster and specular candidate search.

The terrain score favors flat, smooth pixels and boosts concave ones:

    T = w_S * (1 - S~) + w_R * (1 - R~) + w_K * (1 - K~) / 2

with S~, R~ the robust min-max normalized slope and roughness and K~ the
signed curvature scaled to [-1, 1] (so concave, negative-curvature pixels
score above 0.5 on the curvature term). NOTE: the exact functional form of
the terrain score is this project's choice; only its monotone behavior
(flat/smooth up, concave up) is externally fixed. Land cover then scales
the score per class: R = T * (1 + beta).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import SPEED_OF_LIGHT, landcover_table
from .errors import RasterValidationError
from .geometry import LinkSpec, azimuth_unit, slant_range_km
from .raster import RasterGrid
from .terrain import TerrainDerivatives


def _robust_minmax(layer: np.ndarray, lo_pct=1.0, hi_pct=99.0) -> np.ndarray:
    v = layer[np.isfinite(layer)]
    if v.size == 0:
        return np.zeros_like(layer)
    lo, hi = np.percentile(v, [lo_pct, hi_pct])
    if hi - lo < 1e-12:
        return np.zeros_like(layer)
    return np.clip((layer - lo) / (hi - lo), 0.0, 1.0)


def _signed_unit(layer: np.ndarray, pct=99.0) -> np.ndarray:
    v = np.abs(layer[np.isfinite(layer)])
    if v.size == 0:
        return np.zeros_like(layer)
    scale = np.percentile(v, pct)
    if scale < 1e-12:
        return np.zeros_like(layer)
    return np.clip(layer / scale, -1.0, 1.0)


def terrain_reflect_score(derivs: TerrainDerivatives,
                          w_slope: float = 0.4, w_rough: float = 0.4,
                          w_curv: float = 0.2) -> np.ndarray:
    if abs(w_slope + w_rough + w_curv - 1.0) > 1e-9:
        raise ValueError("reflection weights must sum to 1")
    s_norm = _robust_minmax(derivs.slope_deg)
    r_norm = _robust_minmax(derivs.roughness)
    k_unit = _signed_unit(derivs.curvature)
    concave = np.clip((-k_unit + 1.0) / 2.0, 0.0, 1.0)
    t = w_slope * (1.0 - s_norm) + w_rough * (1.0 - r_norm) + w_curv * concave
    t[~np.isfinite(derivs.slope_deg)] = np.nan
    return t


def apply_landcover(t_score: np.ndarray, landcover: RasterGrid,
                    classes: dict | None = None) -> np.ndarray:
    """R = T * (1 + beta_class), elementwise."""
    classes = classes if classes is not None else landcover_table()
    if t_score.shape != landcover.values.shape:
        raise RasterValidationError(
            f"score/landcover geometry mismatch {t_score.shape} vs {landcover.values.shape}"
        )
    beta = np.zeros_like(t_score)
    lc = landcover.values
    valid = landcover.valid_mask()
    ids = np.unique(lc[valid]).astype(int)
    for cid in ids:
        if cid not in classes:
            raise RasterValidationError(f"unknown land-cover class id {cid}")
        beta[(lc == cid) & valid] = classes[cid].beta_reflect
    return t_score * (1.0 + beta)


@dataclass
class ReflectionMap:
    grid: RasterGrid  # geometry reference (the DEM)
    values: np.ndarray

    def value_at(self, x: float, y: float) -> float:
        r, c = self.grid.world_to_pixel(x, y)
        if not (0 <= r < self.grid.height and 0 <= c < self.grid.width):
            return np.nan
        return float(self.values[r, c])


def build_reflection_map(derivs: TerrainDerivatives, landcover: RasterGrid,
                         classes: dict | None = None,
                         w_slope=0.4, w_rough=0.4, w_curv=0.2) -> ReflectionMap:
    t = terrain_reflect_score(derivs, w_slope, w_rough, w_curv)
    r = apply_landcover(t, landcover, classes)
    return ReflectionMap(grid=derivs.grid, values=r)


@dataclass
class ReflectionCandidate:
    x: float
    y: float
    r_value: float
    specular_error_deg: float
    validated: bool
    path_excess_delay_s: float
    relative_power_db: float


def _surface_normal(slope_deg: float, aspect_deg: float, flat: bool) -> np.ndarray:
    if flat or not math.isfinite(aspect_deg):
        return np.array([0.0, 0.0, 1.0])
    g = math.tan(math.radians(slope_deg))
    ax, ay = azimuth_unit(aspect_deg)  # uphill direction
    n = np.array([-g * ax, -g * ay, 1.0])
    return n / np.linalg.norm(n)


def candidate_ring(
    link: LinkSpec,
    refl_map: ReflectionMap,
    derivs: TerrainDerivatives,
    dem: RasterGrid,
    ring_start_m: float = 10.0,
    ring_factor: float = 1.5,
    ring_max_m: float = 5000.0,
    ring_points: int = 72,
    keep_percentile: float = 90.0,
    floor: float = 0.05,
    specular_tol_deg: float = 5.0,
) -> list[ReflectionCandidate]:
    """Sample concentric rings around the UT and validate specular geometry.

    Ring radii grow geometrically (far reflectors are coarser targets);
    only pixels with reflection value above both the map percentile and the
    absolute floor are tested. A candidate validates when mirroring the
    incoming satellite ray about the local surface normal points at the UT
    antenna within the angular tolerance.
    """
    finite = refl_map.values[np.isfinite(refl_map.values)]
    if finite.size == 0:
        return []
    cutoff = max(float(np.percentile(finite, keep_percentile)), floor)

    el = math.radians(link.elevation_deg)
    sat_dir = np.array([  # unit vector from ground toward the satellite
        math.sin(math.radians(link.azimuth_deg)) * math.cos(el),
        math.cos(math.radians(link.azimuth_deg)) * math.cos(el),
        math.sin(el),
    ])
    slant_m = slant_range_km(link.elevation_deg, link.altitude_km) * 1000.0
    ut_r, ut_c = dem.world_to_pixel(link.ut_x, link.ut_y)
    ut_z = float(dem.values[ut_r, ut_c]) + link.ut_height_agl_m
    ut_pos = np.array([link.ut_x, link.ut_y, ut_z])
    sat_pos = ut_pos + sat_dir * slant_m
    d_direct = slant_m

    out: list[ReflectionCandidate] = []
    seen: set[tuple[int, int]] = set()
    radius = ring_start_m
    while radius <= ring_max_m:
        for k in range(ring_points):
            ang = 2.0 * math.pi * k / ring_points
            x = link.ut_x + radius * math.sin(ang)
            y = link.ut_y + radius * math.cos(ang)
            if not dem.contains(x, y):
                continue
            r, c = dem.world_to_pixel(x, y)
            if (r, c) in seen:
                continue
            seen.add((r, c))
            r_val = float(refl_map.values[r, c])
            if not math.isfinite(r_val) or r_val < cutoff:
                continue
            px, py = dem.pixel_to_world(r, c)
            pz = float(dem.values[r, c])
            if dem.is_nodata(pz):
                continue
            normal = _surface_normal(
                float(derivs.slope_deg[r, c]),
                float(derivs.aspect_deg[r, c]),
                bool(derivs.flat[r, c]),
            )
            incoming = -sat_dir  # ray arriving at the surface
            reflected = incoming - 2.0 * np.dot(incoming, normal) * normal
            cand_pos = np.array([px, py, pz])
            to_ut = ut_pos - cand_pos
            dist_to_ut = np.linalg.norm(to_ut)
            if dist_to_ut < 1e-6:
                continue
            to_ut = to_ut / dist_to_ut
            cosang = float(np.clip(np.dot(reflected, to_ut), -1.0, 1.0))
            err_deg = math.degrees(math.acos(cosang))
            validated = err_deg <= specular_tol_deg
            d_leg = float(np.linalg.norm(sat_pos - cand_pos)) + dist_to_ut
            excess = max(d_leg - d_direct, 0.0)
            # heuristic power map: clamp R into (0, 1] and charge the extra
            # spreading loss of the longer path
            r_clamped = min(max(r_val, 1e-6), 1.0)
            fspl_excess = 20.0 * math.log10(d_leg / d_direct) if d_direct > 0 else 0.0
            rel_power = 20.0 * math.log10(r_clamped) - fspl_excess
            out.append(ReflectionCandidate(
                x=px, y=py, r_value=r_val, specular_error_deg=err_deg,
                validated=validated, path_excess_delay_s=excess / SPEED_OF_LIGHT,
                relative_power_db=rel_power,
            ))
        radius *= ring_factor
    out.sort(key=lambda cand: (-cand.validated, -cand.relative_power_db))
    return out


def best_validated(candidates: list[ReflectionCandidate]) -> ReflectionCandidate | None:
    for cand in candidates:
        if cand.validated:
            return cand
    return None
