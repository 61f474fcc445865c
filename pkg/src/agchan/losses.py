"""Per-link loss terms: free-space, diffraction, vegetation, atmosphere, multipath.

Diffraction uses the Bullington equivalent-edge construction on the traced
path profile plus a spherical-earth delta correction (clutter/ducting
machinery intentionally omitted). Vegetation extinction runs boundary
detection by coarse stepping + bisection along the slant path, then a
frequency/class power-law fit with a saturating cap. Atmospheric terms are
a table-driven cosecant model, a deliberate simplification of the full
climatological procedure. Multipath combines the direct ray and the
strongest validated reflection in a two-wave-plus-diffuse average.
"""

from __future__ import annotations

import csv
import math
from bisect import bisect_left
from dataclasses import dataclass

import numpy as np

from .config import (
    DEFAULT_CLOUD_COEFF_DB_PER_KGM2,
    DEFAULT_GAS_ZENITH_DB,
    DEFAULT_RAIN_HEIGHT_KM,
    DEFAULT_RAIN_KALPHA,
    DEFAULT_VEGETATION_FIT_BY_CLASS,
    DEFAULT_VEGETATION_FITS,
    EFFECTIVE_EARTH_RADIUS_M,
    landcover_table,
)
from .geometry import LinkSpec
from .raytrace import PathProfile
from .reflection import ReflectionCandidate


def fspl_db(frequency_hz: float, distance_m: float) -> float:
    """Free-space path loss, 20log10(d_km) + 20log10(f_MHz) + 32.45."""
    if frequency_hz <= 0 or distance_m <= 0:
        raise ValueError("frequency and distance must be positive")
    return (
        20.0 * math.log10(distance_m / 1000.0)
        + 20.0 * math.log10(frequency_hz / 1e6)
        + 32.45
    )


def knife_edge_loss(nu: float) -> float:
    """Single knife-edge diffraction loss J(nu), 0 below the -0.78 cutoff."""
    if nu <= -0.78:
        return 0.0
    return 6.9 + 20.0 * math.log10(math.sqrt((nu - 0.1) ** 2 + 1.0) + nu - 0.1)


def knife_edge_nu(h_m: float, d1_m: float, d2_m: float, wavelength_m: float) -> float:
    """Diffraction parameter from obstacle excess height h above the ray."""
    if d1_m <= 0 or d2_m <= 0:
        raise ValueError("d1 and d2 must be positive")
    return h_m * math.sqrt(2.0 * (d1_m + d2_m) / (wavelength_m * d1_m * d2_m))


def _bullington_core(points, d_tot, h_ts, h_rs, wavelength_m, r_eff_m,
                     edge_floor_m=1.0):
    """Equivalent-edge knife loss over (distance, height) profile points.

    Earth bulge d1*d2/(2 r_eff) is added to every profile height; the
    empirical Bullington rounding term is not applied so that a one-point
    profile collapses exactly to the single knife edge. Edge distances are
    floored at edge_floor_m from either terminal: sub-pixel knife-edge
    geometry is out of model scope and unfloored terminal-adjacent edges
    produce unbounded diffraction parameters.
    """
    if not points:
        return 0.0
    eps = min(edge_floor_m, d_tot * 0.25)
    pts = [(min(max(d, eps), d_tot - eps), h) for d, h in points]
    g = [(d, h + d * (d_tot - d) / (2.0 * r_eff_m)) for d, h in pts]

    def chord(d):
        return (h_ts * (d_tot - d) + h_rs * d) / d_tot

    s_tim = max((gh - h_ts) / d for d, gh in g)
    s_tr = (h_rs - h_ts) / d_tot
    if s_tim < s_tr:
        nu = max(
            (gh - chord(d)) * math.sqrt(2.0 * d_tot / (wavelength_m * d * (d_tot - d)))
            for d, gh in g
        )
        return knife_edge_loss(nu)
    s_rim = max((gh - h_rs) / (d_tot - d) for d, gh in g)
    d_bp = (h_rs - h_ts + s_rim * d_tot) / (s_tim + s_rim)
    d_bp = min(max(d_bp, eps), d_tot - eps)
    nu_b = (h_ts + s_tim * d_bp - chord(d_bp)) * math.sqrt(
        2.0 * d_tot / (wavelength_m * d_bp * (d_tot - d_bp))
    )
    return knife_edge_loss(nu_b)


def _dft_first_term(d_km, h_te_m, h_re_m, a_e_km, f_ghz):
    """First-term spherical-earth diffraction loss (land, beta ~ 1)."""
    beta = 1.0
    x = 21.88 * beta * (f_ghz / a_e_km**2) ** (1.0 / 3.0) * d_km

    def f_of_x(xv):
        if xv >= 1.6:
            return 11.0 + 10.0 * math.log10(xv) - 17.6 * xv
        return -20.0 * math.log10(xv) - 5.6488 * xv**1.425

    def g_of_h(h_m):
        y = 0.9575 * beta * (f_ghz**2 / a_e_km) ** (1.0 / 3.0) * h_m
        b = max(beta * y, 1e-3)
        if b > 2.0:
            return 17.6 * math.sqrt(b - 1.1) - 5.0 * math.log10(b - 1.1) - 8.0
        return 20.0 * math.log10(b + 0.1 * b**3)

    return max(-f_of_x(x) - g_of_h(h_te_m) - g_of_h(h_re_m), 0.0)


def spherical_earth_loss(d_m, h_te_m, h_re_m, wavelength_m, frequency_hz,
                         r_eff_m=EFFECTIVE_EARTH_RADIUS_M,
                         within_horizon_interp: bool = True) -> float:
    """Smooth-earth diffraction loss between terminals h_te/h_re above datum.

    within_horizon_interp=False drops the marginal-clearance interpolation
    inside the smooth-earth horizon and returns 0 there (used by the
    profile diffraction path, where only obstructed pixels are known and a
    fitted smooth surface is not available).
    """
    h_te = max(h_te_m, 0.1)
    h_re = max(h_re_m, 0.1)
    d_km = d_m / 1000.0
    a_e = r_eff_m / 1000.0
    f_ghz = frequency_hz / 1e9
    d_los = math.sqrt(2.0 * a_e) * (math.sqrt(0.001 * h_te) + math.sqrt(0.001 * h_re))
    if d_km >= d_los:
        return _dft_first_term(d_km, h_te, h_re, a_e, f_ghz)
    if not within_horizon_interp:
        return 0.0
    # within-horizon: clearance at the smooth-earth reflection point
    c = (h_te - h_re) / (h_te + h_re)
    m = 250.0 * d_km * d_km / (a_e * (h_te + h_re))
    arg = 3.0 * c / 2.0 * math.sqrt(3.0 * m / (m + 1.0) ** 3)
    b = 2.0 * math.sqrt((m + 1.0) / (3.0 * m)) * math.cos(
        math.pi / 3.0 + math.acos(min(max(arg, -1.0), 1.0)) / 3.0
    )
    d1 = d_km / 2.0 * (1.0 + b)
    d2 = d_km - d1
    h_se = (
        (h_te - 500.0 * d1 * d1 / a_e) * d2 + (h_re - 500.0 * d2 * d2 / a_e) * d1
    ) / d_km
    h_req = 17.456 * math.sqrt(d1 * d2 * wavelength_m / d_km)
    if h_se > h_req:
        return 0.0
    a_em = 500.0 * (d_km / (math.sqrt(h_te) + math.sqrt(h_re))) ** 2
    loss = _dft_first_term(d_km, h_te, h_re, a_em, f_ghz)
    if loss <= 0.0:
        return 0.0
    return (1.0 - h_se / h_req) * loss


def bullington_loss(profile: PathProfile, link: LinkSpec,
                    r_eff_m: float = EFFECTIVE_EARTH_RADIUS_M) -> float:
    """Diffraction loss of a traced profile: Bullington edge + smooth-earth delta.

    Empty profiles cost 0 dB. The smooth-earth datum is the lowest height
    seen on the path (simplified stand-in for the fitted smooth profile).
    """
    if not profile.entries:
        return 0.0
    d_tot = profile.total_dist_m
    h_ts = profile.start_height_m
    h_rs = profile.end_height_m
    lam = link.wavelength_m
    points = [(e.dist_h_m, e.terrain_m) for e in profile.entries]

    l_actual = _bullington_core(points, d_tot, h_ts, h_rs, lam, r_eff_m)

    datum = min(min(h for _, h in points), h_ts, h_rs)
    zero_pts = [(d, datum) for d, _ in points]
    l_smooth_bull = _bullington_core(zero_pts, d_tot, h_ts, h_rs, lam, r_eff_m)
    l_sph = spherical_earth_loss(
        d_tot, h_ts - datum, h_rs - datum, lam, link.frequency_hz, r_eff_m,
        within_horizon_interp=False,
    )
    return l_actual + max(l_sph - l_smooth_bull, 0.0)


# -- vegetation --------------------------------------------------------------


@dataclass(frozen=True)
class VegSegment:
    s_in_m: float
    s_out_m: float
    class_id: int

    def __post_init__(self):
        if not self.s_out_m > self.s_in_m >= 0:
            raise ValueError(f"invalid segment [{self.s_in_m}, {self.s_out_m}]")

    @property
    def length_m(self) -> float:
        return self.s_out_m - self.s_in_m


def segment_vegetation(type_oracle, s_max_m: float, step_m: float, tol_m: float,
                       is_vegetation=None) -> list[VegSegment]:
    """Detect vegetation spans along the slant path.

    Coarse-steps the land-cover oracle at step_m; every type change is
    refined by bisection to tol_m. An open segment at the end of the path
    is closed at s_max. type_oracle(s) must be a pure function of s.
    """
    if not step_m > tol_m > 0:
        raise ValueError("require step > tol > 0")
    if is_vegetation is None:
        table = landcover_table()
        is_vegetation = lambda cid: cid in table and table[cid].is_vegetation

    def refine(lo: float, t_lo, hi: float, t_hi):
        # first type boundary inside (lo, hi]; keeps lo on the old-type side
        # so the interval always brackets a change, and returns the new-side
        # type (a midpoint sample cannot represent a knife-edge boundary
        # sitting exactly on a coarse sample)
        while hi - lo > tol_m:
            mid = (lo + hi) / 2.0
            t_mid = type_oracle(mid)
            if t_mid == t_lo:
                lo = mid
            else:
                hi, t_hi = mid, t_mid
        return (lo + hi) / 2.0, t_hi

    segments: list[VegSegment] = []
    s = 0.0
    t_prev = type_oracle(0.0)
    open_seg = False
    s_in = 0.0
    seg_class = None
    while s < s_max_m:
        s_next = min(s + step_m, s_max_m)
        t = type_oracle(s_next)
        if t != t_prev:
            s_star, t_star = refine(s, t_prev, s_next, t)
            if is_vegetation(t_star) and not open_seg:
                s_in, seg_class, open_seg = s_star, t_star, True
            elif not is_vegetation(t_star) and open_seg:
                segments.append(VegSegment(s_in, s_star, seg_class))
                open_seg = False
        t_prev = t
        s = s_next
    if open_seg:
        segments.append(VegSegment(s_in, s_max_m, seg_class))
    return segments


def vegetation_loss(segments: list[VegSegment], frequency_hz: float,
                    fits: dict | None = None,
                    fit_by_class: dict | None = None) -> float:
    """Summed per-segment extinction L = A f_MHz^B d^C with saturating caps."""
    fits = fits if fits is not None else DEFAULT_VEGETATION_FITS
    fit_by_class = fit_by_class if fit_by_class is not None else DEFAULT_VEGETATION_FIT_BY_CLASS
    f_mhz = frequency_hz / 1e6
    total = 0.0
    for seg in segments:
        if seg.length_m < 0:
            raise ValueError("negative segment length")
        row = fits[fit_by_class.get(seg.class_id, "forest")]
        raw = row["A"] * f_mhz ** row["B"] * seg.length_m ** row["C"]
        cap = row["max_db"]
        total += cap * (1.0 - math.exp(-raw / cap))
    return total


# -- atmosphere --------------------------------------------------------------


@dataclass(frozen=True)
class WeatherRecord:
    x: float
    y: float
    rain_mm_h: float
    cloud_lwc: float  # columnar liquid water, kg/m^2
    temp_c: float = 15.0
    pressure_hpa: float = 1013.25


CLEAR_SKY = WeatherRecord(0.0, 0.0, 0.0, 0.0)


def load_weather_csv(path) -> list[WeatherRecord]:
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out.append(WeatherRecord(
                float(row["x"]), float(row["y"]),
                float(row["rain_mm_h"]), float(row["cloud_lwc"]),
                float(row.get("temp_c", 15.0)), float(row.get("pressure_hpa", 1013.25)),
            ))
    return out


def nearest_weather(records: list[WeatherRecord], x: float, y: float) -> WeatherRecord:
    if not records:
        return CLEAR_SKY
    return min(records, key=lambda r: (r.x - x) ** 2 + (r.y - y) ** 2)


def _interp_log_f(table: dict[float, float], frequency_hz: float) -> float:
    freqs = sorted(table)
    if frequency_hz <= freqs[0]:
        return table[freqs[0]]
    if frequency_hz >= freqs[-1]:
        return table[freqs[-1]]
    i = bisect_left(freqs, frequency_hz)
    f0, f1 = freqs[i - 1], freqs[i]
    w = (math.log(frequency_hz) - math.log(f0)) / (math.log(f1) - math.log(f0))
    return table[f0] * (1 - w) + table[f1] * w


def rain_k_alpha(frequency_hz: float, table: dict | None = None) -> tuple[float, float]:
    table = table if table is not None else DEFAULT_RAIN_KALPHA
    ks = {f: v[0] for f, v in table.items()}
    als = {f: v[1] for f, v in table.items()}
    return _interp_log_f(ks, frequency_hz), _interp_log_f(als, frequency_hz)


def atmosphere_loss(elevation_deg: float, frequency_hz: float,
                    weather: WeatherRecord = CLEAR_SKY,
                    gas_table: dict | None = None,
                    cloud_table: dict | None = None,
                    rain_table: dict | None = None,
                    rain_height_km: float = DEFAULT_RAIN_HEIGHT_KM) -> float:
    """Cosecant-scaled zenith attenuation: gas + cloud + effective rain column."""
    if elevation_deg <= 0:
        raise ValueError(f"elevation must be positive, got {elevation_deg}")
    gas_table = gas_table if gas_table is not None else DEFAULT_GAS_ZENITH_DB
    cloud_table = cloud_table if cloud_table is not None else DEFAULT_CLOUD_COEFF_DB_PER_KGM2
    gas_z = _interp_log_f(gas_table, frequency_hz) * (weather.pressure_hpa / 1013.25)
    cloud_z = _interp_log_f(cloud_table, frequency_hz) * weather.cloud_lwc
    k, alpha = rain_k_alpha(frequency_hz, rain_table)
    rain_z = k * weather.rain_mm_h**alpha * rain_height_km if weather.rain_mm_h > 0 else 0.0
    return (gas_z + cloud_z + rain_z) / math.sin(math.radians(elevation_deg))


# -- multipath ---------------------------------------------------------------


@dataclass(frozen=True)
class TwdpParams:
    k_db: float    # dominant-to-diffuse power ratio
    delta: float   # relative balance of the two specular waves, in [0, 1]


def twdp_stats(direct_power_db: float,
               best_reflection: ReflectionCandidate | None,
               diffuse_power_db: float,
               n_phase: int = 256) -> tuple[TwdpParams, float]:
    """Two-wave-with-diffuse multipath statistics.

    Returns (params, multipath_db) where multipath_db is the mean excess
    fade relative to the direct ray alone (positive = fade, negative =
    net gain), obtained by averaging the envelope power in dB over a
    uniform phase difference between the two specular waves (midpoint
    quadrature, n_phase points).
    """
    if not math.isfinite(direct_power_db):
        raise ValueError("direct power must be finite")
    p1 = 10.0 ** (direct_power_db / 10.0)
    p2 = 0.0
    if best_reflection is not None and best_reflection.validated:
        p2 = p1 * 10.0 ** (best_reflection.relative_power_db / 10.0)
    pd = 10.0 ** (diffuse_power_db / 10.0)

    k_db = 10.0 * math.log10((p1 + p2) / pd) if pd > 0 else math.inf
    delta = 2.0 * math.sqrt(p1 * p2) / (p1 + p2) if (p1 + p2) > 0 else 0.0

    phases = 2.0 * math.pi * (np.arange(n_phase) + 0.5) / n_phase
    p_env = p1 + p2 + 2.0 * math.sqrt(p1 * p2) * np.cos(phases) + pd
    p_env = np.maximum(p_env, 1e-300)
    mean_db = float(np.mean(10.0 * np.log10(p_env)))
    multipath_db = 10.0 * math.log10(p1) - mean_db
    return TwdpParams(k_db=k_db, delta=delta), multipath_db


def twdp_mean_linear_power(direct_power_db: float,
                           best_reflection: ReflectionCandidate | None,
                           diffuse_power_db: float,
                           n_phase: int = 256) -> float:
    """Phase-averaged envelope power (linear); equals the component-power sum."""
    p1 = 10.0 ** (direct_power_db / 10.0)
    p2 = 0.0
    if best_reflection is not None and best_reflection.validated:
        p2 = p1 * 10.0 ** (best_reflection.relative_power_db / 10.0)
    pd = 10.0 ** (diffuse_power_db / 10.0)
    phases = 2.0 * math.pi * (np.arange(n_phase) + 0.5) / n_phase
    return float(np.mean(p1 + p2 + 2.0 * math.sqrt(p1 * p2) * np.cos(phases) + pd))
