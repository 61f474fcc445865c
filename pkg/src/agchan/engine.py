"""Per-link channel estimation, region sweeps, and validation metrics."""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc

from .errors import MetricError
from .geometry import LinkSpec
from .losses import (
    CLEAR_SKY,
    VegSegment,
    WeatherRecord,
    atmosphere_loss,
    bullington_loss,
    fspl_db,
    nearest_weather,
    segment_vegetation,
    twdp_stats,
    vegetation_loss,
)
from .raytrace import PathProfile, TraceContext, trace_link
from .reflection import ReflectionMap, best_validated, candidate_ring
from .sampling import SampleDesign


@dataclass
class LossBreakdown:
    fspl_db: float
    diffraction_db: float
    vegetation_db: float
    atmosphere_db: float
    multipath_db: float

    @property
    def total_excess_db(self) -> float:
        return self.diffraction_db + self.vegetation_db + self.atmosphere_db + self.multipath_db

    @property
    def total_db(self) -> float:
        return self.fspl_db + self.total_excess_db

    def to_dict(self) -> dict:
        return {
            "fspl_db": self.fspl_db,
            "diffraction_db": self.diffraction_db,
            "vegetation_db": self.vegetation_db,
            "atmosphere_db": self.atmosphere_db,
            "multipath_db": self.multipath_db,
            "total_excess_db": self.total_excess_db,
            "total_db": self.total_db,
        }


@dataclass
class ChannelEstimate:
    link: LinkSpec
    verdict: str
    breakdown: LossBreakdown
    profile: PathProfile
    timestamp: float = field(default_factory=time.time)

    @property
    def is_los(self) -> bool:
        return self.verdict == "LOS"


@dataclass
class EstimateContext:
    """Everything estimate_link needs beyond the link itself."""

    trace: TraceContext
    weather: list[WeatherRecord] = field(default_factory=list)
    reflection_map: ReflectionMap | None = None
    derivs: object = None  # TerrainDerivatives when reflections are enabled
    diffuse_offset_db: float = -20.0
    gas_table: dict | None = None
    cloud_table: dict | None = None
    rain_table: dict | None = None
    rain_height_km: float = 3.0
    ring_kwargs: dict = field(default_factory=dict)


def _vegetation_oracle(profile: PathProfile, ctx: TraceContext):
    """Land-cover class along the slant path, gated to where the ray is
    actually inside the canopy volume (corrected link height below the
    pixel's effective height); elsewhere returns -1."""
    seg = profile.segment
    cos_el = seg.cos_elevation
    landcover = ctx.landcover
    dem_tiles = ctx.dem_tiles

    def oracle(s_m: float) -> int:
        t_m = s_m * cos_el
        if t_m > seg.length_m:
            t_m = seg.length_m
        x, y = seg.point_at(t_m)
        if landcover is None or not landcover.contains(x, y):
            return -1
        cls_val = landcover.value_at(x, y)
        if landcover.is_nodata(cls_val):
            return -1
        cid = int(round(cls_val))
        cls = ctx.classes.get(cid)
        if cls is None or not cls.is_vegetation:
            return -1
        grid = dem_tiles.grid_at(x, y)
        r, c = grid.world_to_pixel(x, y)
        terrain = float(grid.values[r, c])
        if grid.is_nodata(terrain):
            return -1
        h_link = seg.h_corrected(t_m)
        if h_link < terrain + cls.canopy_height_m:
            return cid
        return -1

    return oracle


def _vegetation_segments(oracle, s_max: float, step: float, tol: float):
    """Boundary detection that also handles a path starting inside canopy.

    The literal detection loop only opens a segment on a transition, so a
    UT antenna under vegetation would leave the leading canopy span
    unaccounted. Prepending one virtual open-terrain step and shifting the
    result back closes that gap without touching the core routine.
    """
    shifted = segment_vegetation(
        lambda s: -1 if s < step else oracle(s - step),
        s_max + step, step, tol, is_vegetation=lambda cid: cid != -1,
    )
    out = []
    for seg in shifted:
        s_in = max(seg.s_in_m - step, 0.0)
        s_out = min(seg.s_out_m - step, s_max)
        if s_out > s_in:
            out.append(VegSegment(s_in, s_out, seg.class_id))
    return out


def _strip_vegetation_entries(profile: PathProfile, segments,
                              slack_m: float = 0.0) -> PathProfile:
    """Drop profile entries covered by an extinction segment so canopy
    obstructions are not double-counted as diffraction edges. slack_m
    absorbs the bisection tolerance of the segment boundaries."""
    if not segments or not profile.entries:
        return profile
    cos_el = profile.segment.cos_elevation
    kept = []
    for e in profile.entries:
        s = e.dist_h_m / cos_el
        if not any(seg.s_in_m - slack_m <= s <= seg.s_out_m + slack_m
                   for seg in segments):
            kept.append(e)
    out = PathProfile(
        entries=kept, min_clearance_m=profile.min_clearance_m,
        min_rho=profile.min_rho, verdict=profile.verdict,
        total_dist_m=profile.total_dist_m, start_height_m=profile.start_height_m,
        end_height_m=profile.end_height_m, segment=profile.segment,
        link=profile.link,
    )
    return out


def estimate_link(link: LinkSpec, ectx: EstimateContext) -> ChannelEstimate:
    """Trace one link and assemble its loss breakdown."""
    try:
        profile = trace_link(link, ectx.trace)

        veg_segments = []
        veg_db = 0.0
        diff_db = 0.0
        if not profile.is_los and profile.segment.length_m > 0:
            seg = profile.segment
            s_max = seg.length_m / seg.cos_elevation
            cell = ectx.trace.dem_tiles.load(0).cell_size
            tol = 0.0
            if ectx.trace.landcover is not None and s_max > 2.0:
                step = max(cell, s_max / 200.0)
                tol = min(cell / 10.0, step / 2.0)
                veg_segments = _vegetation_segments(
                    _vegetation_oracle(profile, ectx.trace), s_max, step, tol,
                )
                veg_db = vegetation_loss(veg_segments, link.frequency_hz)
            diff_profile = _strip_vegetation_entries(profile, veg_segments,
                                                     slack_m=tol)
            diff_db = bullington_loss(diff_profile, link)

        weather = nearest_weather(ectx.weather, link.ut_x, link.ut_y)
        atmos_db = atmosphere_loss(
            link.elevation_deg, link.frequency_hz, weather,
            gas_table=ectx.gas_table, cloud_table=ectx.cloud_table,
            rain_table=ectx.rain_table, rain_height_km=ectx.rain_height_km,
        )

        multipath_db = 0.0
        if ectx.reflection_map is not None and ectx.derivs is not None:
            cands = candidate_ring(
                link, ectx.reflection_map, ectx.derivs,
                ectx.trace.dem_tiles.load(0), **ectx.ring_kwargs,
            )
            best = best_validated(cands)
            if best is not None:
                _, multipath_db = twdp_stats(0.0, best, ectx.diffuse_offset_db)

        slant_m = profile.segment.slant_range_m
        breakdown = LossBreakdown(
            fspl_db=fspl_db(link.frequency_hz, slant_m),
            diffraction_db=diff_db,
            vegetation_db=veg_db,
            atmosphere_db=atmos_db,
            multipath_db=multipath_db,
        )
        return ChannelEstimate(link=link, verdict=profile.verdict,
                               breakdown=breakdown, profile=profile)
    except Exception as e:
        raise type(e)(
            f"link point_id={link.point_id} el={link.elevation_deg} "
            f"az={link.azimuth_deg} alt={link.altitude_km}: {e}"
        ) from e


@dataclass
class RegionReport:
    obstruction_rate_by_elevation: dict
    attenuation_by_elevation: dict  # {elev: (xs, ys, totals)} sample scatter
    estimates: list[ChannelEstimate]
    failures: list[str]
    summary: dict


def region_sweep(design: SampleDesign, ectx: EstimateContext,
                 frequency_hz: float, ut_height_agl_m: float = 1.5,
                 threads: int = 1) -> RegionReport:
    """Evaluate every (ground point x satellite geometry) and aggregate."""
    if not design.samples:
        raise ValueError("empty sample design")
    jobs = []
    for s in design.samples:
        for el, az, alt in design.satellite_grid:
            jobs.append(LinkSpec(
                ut_x=s.x, ut_y=s.y, elevation_deg=el, azimuth_deg=az,
                altitude_km=alt, frequency_hz=frequency_hz,
                ut_height_agl_m=ut_height_agl_m, point_id=s.point_id,
            ))

    estimates: list[ChannelEstimate] = []
    failures: list[str] = []

    def run(link):
        try:
            return estimate_link(link, ectx)
        except Exception as e:
            return str(e)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    for res in results:
        (failures if isinstance(res, str) else estimates).append(res)

    by_el: dict = {}
    atten: dict = {}
    for est in estimates:
        el = est.link.elevation_deg
        by_el.setdefault(el, []).append(est)
    rates = {}
    for el, group in sorted(by_el.items()):
        rates[el] = sum(1 for e in group if not e.is_los) / len(group)
        atten[el] = (
            [e.link.ut_x for e in group],
            [e.link.ut_y for e in group],
            [e.breakdown.total_excess_db for e in group],
        )
    summary = {
        "n_links": len(jobs),
        "n_failed": len(failures),
        "nlos_fraction": (
            sum(1 for e in estimates if not e.is_los) / len(estimates) if estimates else 0.0
        ),
        "mean_excess_db": (
            float(np.mean([e.breakdown.total_excess_db for e in estimates]))
            if estimates else 0.0
        ),
    }
    return RegionReport(rates, atten, estimates, failures, summary)


def idw_raster(xs, ys, values, bounds, cell_size: float, power: float = 2.0,
               nodata: float = -9999.0):
    """Inverse-distance-weighted spread of sample values over a grid.

    Rendering aid only; values between samples are not physical.
    """
    xmin, ymin, xmax, ymax = bounds
    w = max(int(round((xmax - xmin) / cell_size)), 1)
    h = max(int(round((ymax - ymin) / cell_size)), 1)
    gx = xmin + (np.arange(w) + 0.5) * cell_size
    gy = ymax - (np.arange(h) + 0.5) * cell_size
    gxx, gyy = np.meshgrid(gx, gy)
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    vals = np.asarray(values, dtype=np.float64)
    if xs.size == 0:
        return np.full((h, w), nodata)
    d2 = (gxx[..., None] - xs) ** 2 + (gyy[..., None] - ys) ** 2
    wgt = 1.0 / np.maximum(d2, 1e-12) ** (power / 2.0)
    out = (wgt * vals).sum(axis=-1) / wgt.sum(axis=-1)
    exact = d2.min(axis=-1) < 1e-12
    if exact.any():
        out[exact] = vals[np.argmin(d2, axis=-1)[exact]]
    return out


# -- validation metrics ----------------------------------------------------------


def moving_average(series, window: int, circular: bool = True) -> np.ndarray:
    """Boxcar smoother; circular padding preserves the series mean exactly."""
    x = np.asarray(series, dtype=np.float64)
    if window < 1:
        raise ValueError("window must be >= 1")
    if window == 1 or x.size == 0:
        return x.copy()
    kernel = np.ones(window) / window
    if circular:
        pad = window // 2
        xp = np.concatenate([x[-pad:], x, x[:window - 1 - pad]])
        return np.convolve(xp, kernel, mode="valid")
    return np.convolve(x, kernel, mode="same")


def sign_agreement(x, y) -> float:
    """Fraction of samples whose signs match; zero matches only zero.

    Inputs are expected to be first differences of the raw series (the
    statistic asks whether two series move in the same direction).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise MetricError(f"length mismatch {x.shape} vs {y.shape}")
    if x.size < 2:
        raise MetricError("need at least 2 samples")
    return float(np.mean(np.sign(x) == np.sign(y)))


def pearson(x, y) -> tuple[float, float]:
    """Pearson r and the two-sided p-value from the t distribution (N-2 dof)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise MetricError(f"length mismatch {x.shape} vs {y.shape}")
    n = x.size
    if n < 3:
        raise MetricError("need at least 3 samples")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float(np.sum(xc**2)) * float(np.sum(yc**2)))
    if denom <= 0:
        raise MetricError("zero variance: correlation undefined")
    r = float(np.sum(xc * yc)) / denom
    r = min(max(r, -1.0), 1.0)
    df = n - 2
    if 1.0 - r * r <= 0:
        return r, 0.0
    t2 = df * r * r / (1.0 - r * r)
    # two-sided tail of the t distribution via the regularized incomplete beta
    p = float(betainc(df / 2.0, 0.5, df / (df + t2)))
    return r, p
