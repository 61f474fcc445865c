"""UT-satellite link geometry on the spherical earth.

Converts (UT position, elevation, azimuth, orbital altitude) into the 3D
quantities the tracer needs: slant range, the horizontal ground segment to
walk, and the raw straight-line link height along it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .config import EARTH_RADIUS_M, EFFECTIVE_EARTH_RADIUS_M, SPEED_OF_LIGHT
from .errors import OutOfDomainError


@dataclass(frozen=True)
class LinkSpec:
    ut_x: float
    ut_y: float
    elevation_deg: float
    azimuth_deg: float
    altitude_km: float
    frequency_hz: float
    ut_height_agl_m: float = 1.5
    point_id: int = -1

    def __post_init__(self):
        if not 0.0 < self.elevation_deg <= 90.0:
            raise ValueError(f"elevation must be in (0, 90], got {self.elevation_deg}")
        if self.frequency_hz <= 0:
            raise ValueError("frequency must be positive")
        if self.altitude_km <= 0:
            raise ValueError("altitude must be positive")

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.frequency_hz


def slant_range_km(elevation_deg: float, altitude_km: float) -> float:
    """Spherical-earth slant range from ground to the satellite shell."""
    if not 0.0 < elevation_deg <= 90.0:
        raise ValueError(f"elevation must be in (0, 90], got {elevation_deg}")
    r = EARTH_RADIUS_M / 1000.0
    h = altitude_km
    s = math.sin(math.radians(elevation_deg))
    return math.sqrt(r * r * s * s + 2.0 * r * h + h * h) - r * s


def azimuth_unit(azimuth_deg: float) -> tuple[float, float]:
    """Horizontal unit vector for a compass azimuth (0 = north, 90 = east)."""
    a = math.radians(azimuth_deg % 360.0)
    return math.sin(a), math.cos(a)


@dataclass(frozen=True)
class GroundSegment:
    """Horizontal trace of a link, from the UT toward the satellite azimuth.

    h_raw(t) is the straight-line (uncorrected) link height at horizontal
    distance t from the UT; corrected height subtracts the chord sagitta
    d1*d2 / (2 R_eff).
    """

    p_start: tuple[float, float]
    p_end: tuple[float, float]
    length_m: float
    start_height_m: float  # terrain at UT + antenna AGL
    tan_elevation: float
    cos_elevation: float
    slant_range_m: float

    def h_raw(self, dist_h_m: float) -> float:
        return self.start_height_m + dist_h_m * self.tan_elevation

    def h_corrected(self, dist_h_m: float, r_eff: float = EFFECTIVE_EARTH_RADIUS_M) -> float:
        d2 = dist_h_m / self.cos_elevation
        d1 = max(self.slant_range_m - d2, 0.0)
        return self.h_raw(dist_h_m) - d1 * d2 / (2.0 * r_eff)

    def point_at(self, dist_h_m: float) -> tuple[float, float]:
        f = dist_h_m / self.length_m if self.length_m > 0 else 0.0
        return (
            self.p_start[0] + f * (self.p_end[0] - self.p_start[0]),
            self.p_start[1] + f * (self.p_end[1] - self.p_start[1]),
        )


def _truncation_distance(
    h0: float,
    tan_el: float,
    cos_el: float,
    slant_m: float,
    ceiling_m: float,
    r_eff: float = EFFECTIVE_EARTH_RADIUS_M,
) -> float:
    """Horizontal distance where the corrected link height reaches the ceiling.

    Beyond that point no terrain can obstruct the ray. The corrected height
    is a convex quadratic in t, so a single upward crossing exists whenever
    h(0) < ceiling.
    """
    if h0 >= ceiling_m:
        return 0.0
    # h(t) = h0 + b t + a t^2 with
    a = 1.0 / (2.0 * r_eff * cos_el * cos_el)
    b = tan_el - slant_m / (2.0 * r_eff * cos_el)
    c = h0 - ceiling_m
    disc = b * b - 4.0 * a * c
    # c < 0 and a > 0 guarantee disc > 0 and one positive root;
    # the subtraction-free form avoids cancellation at steep elevations
    t = 2.0 * c / (-b - math.sqrt(disc))
    return max(t, 0.0)


def _clip_to_bbox(p0, direction, t_max, bounds) -> float:
    """Largest t <= t_max keeping p0 + t*direction inside bounds."""
    xmin, ymin, xmax, ymax = bounds
    t_hi = t_max
    for coord, d, lo, hi in ((p0[0], direction[0], xmin, xmax), (p0[1], direction[1], ymin, ymax)):
        if abs(d) < 1e-15:
            if not lo <= coord <= hi:
                return 0.0
            continue
        t0 = (lo - coord) / d
        t1 = (hi - coord) / d
        if t0 > t1:
            t0, t1 = t1, t0
        t_hi = min(t_hi, t1)
    return max(t_hi, 0.0)


def ground_segment(
    link: LinkSpec,
    roi_bounds: tuple[float, float, float, float],
    ut_terrain_m: float,
    max_roi_elevation_m: float,
    margin_m: float = 100.0,
) -> GroundSegment:
    """Build the traced segment for a link.

    The segment runs from the UT along the satellite azimuth and stops at
    whichever comes first: the ROI boundary, the point where the corrected
    link height clears the ROI's maximum elevation plus margin, or the
    satellite's horizontal ground distance.
    """
    xmin, ymin, xmax, ymax = roi_bounds
    if not (xmin <= link.ut_x <= xmax and ymin <= link.ut_y <= ymax):
        raise OutOfDomainError(
            f"UT ({link.ut_x}, {link.ut_y}) outside loaded rasters {roi_bounds}"
        )
    el = math.radians(link.elevation_deg)
    tan_el, cos_el = math.tan(el), math.cos(el)
    slant_m = slant_range_km(link.elevation_deg, link.altitude_km) * 1000.0
    h0 = ut_terrain_m + link.ut_height_agl_m
    direction = azimuth_unit(link.azimuth_deg)

    if link.elevation_deg >= 90.0 - 1e-9:  # vertical link: no horizontal trace
        return GroundSegment(
            p_start=(link.ut_x, link.ut_y), p_end=(link.ut_x, link.ut_y),
            length_m=0.0, start_height_m=h0, tan_elevation=tan_el,
            cos_elevation=cos_el, slant_range_m=slant_m,
        )

    t_ceiling = _truncation_distance(h0, tan_el, cos_el, slant_m, max_roi_elevation_m + margin_m)
    t_ground = slant_m * cos_el
    t = min(t_ceiling, t_ground)
    t = _clip_to_bbox((link.ut_x, link.ut_y), direction, t, roi_bounds)

    p_end = (link.ut_x + direction[0] * t, link.ut_y + direction[1] * t)
    return GroundSegment(
        p_start=(link.ut_x, link.ut_y),
        p_end=p_end,
        length_m=t,
        start_height_m=h0,
        tan_elevation=tan_el,
        cos_elevation=cos_el,
        slant_range_m=slant_m,
    )
