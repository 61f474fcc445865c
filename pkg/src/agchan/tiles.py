"""AGX1 tile container: the training/prediction exchange format.

Layout: magic "AGX1"; little-endian header u32 x 5 (version, H, W,
n_cond_channels, flags); then f32 planes in fixed order [DEM_norm,
slope_norm, aspect_sin, aspect_cos, landcover_id, obs_z, mask]; footer
CRC32 of the plane payload. A JSON sidecar <name>.meta.json carries the
satellite geometry, normalizer state, and geo-registration. flags bit 0
marks a prediction tile (mask all ones, obs_z holds the model output).
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffusion import NormalizerState
from .errors import RasterParseError
from .raster import RasterGrid
from .terrain import TerrainDerivatives

AGX1_MAGIC = b"AGX1"
AGX1_VERSION = 1
N_COND_CHANNELS = 5
PLANE_NAMES = ("dem_norm", "slope_norm", "aspect_sin", "aspect_cos",
               "landcover", "obs_z", "mask")
FLAG_PREDICTION = 1

_HEADER = struct.Struct("<5I")


@dataclass
class TileSample:
    dem_norm: np.ndarray
    slope_norm: np.ndarray
    aspect_sin: np.ndarray
    aspect_cos: np.ndarray
    landcover: np.ndarray
    obs_z: np.ndarray
    mask: np.ndarray
    elev_deg: float
    az_deg: float
    alt_km: float
    normalizer: NormalizerState
    geo: dict = field(default_factory=dict)  # origin_x, origin_y, cell_size
    flags: int = 0

    def __post_init__(self):
        shape = self.dem_norm.shape
        for name in PLANE_NAMES:
            plane = np.asarray(getattr(self, name), dtype=np.float32)
            if plane.shape != shape:
                raise ValueError(f"plane {name} shape {plane.shape} != {shape}")
            setattr(self, name, plane)
        if not np.all((self.mask == 0) | (self.mask == 1)):
            raise ValueError("mask plane must be binary")

    @property
    def shape(self) -> tuple[int, int]:
        return self.dem_norm.shape

    @property
    def observed_fraction(self) -> float:
        return float(self.mask.mean())

    def planes(self) -> np.ndarray:
        return np.stack([getattr(self, n) for n in PLANE_NAMES])


def write_tile(tile: TileSample, path) -> None:
    path = Path(path)
    h, w = tile.shape
    payload = np.ascontiguousarray(tile.planes(), dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(AGX1_MAGIC)
        f.write(_HEADER.pack(AGX1_VERSION, h, w, N_COND_CHANNELS, tile.flags))
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))
    meta = {
        "elev_deg": tile.elev_deg,
        "az_deg": tile.az_deg,
        "alt_km": tile.alt_km,
        **tile.normalizer.to_dict(),
        "geo": tile.geo,
    }
    with open(path.with_suffix(path.suffix + ".meta.json"), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def read_tile(path) -> TileSample:
    path = Path(path)
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != AGX1_MAGIC:
        raise RasterParseError(f"bad magic {raw[:4]!r}", byte_offset=0)
    version, h, w, n_cond, flags = _HEADER.unpack_from(raw, 4)
    if version != AGX1_VERSION:
        raise RasterParseError(f"unsupported version {version}", byte_offset=4)
    if n_cond != N_COND_CHANNELS:
        raise RasterParseError(f"expected {N_COND_CHANNELS} cond channels, got {n_cond}",
                               byte_offset=8)
    n_planes = len(PLANE_NAMES)
    need = n_planes * h * w * 4
    body = raw[4 + _HEADER.size:]
    if len(body) != need + 4:
        raise RasterParseError(f"expected {need + 4} bytes after header, got {len(body)}",
                               byte_offset=4 + _HEADER.size)
    payload, crc_raw = body[:need], body[need:]
    (crc_stored,) = struct.unpack("<I", crc_raw)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc_stored:
        raise RasterParseError("payload CRC mismatch", byte_offset=4 + _HEADER.size + need)
    planes = np.frombuffer(payload, dtype="<f4").reshape(n_planes, h, w)

    meta_path = path.with_suffix(path.suffix + ".meta.json")
    with open(meta_path) as f:
        meta = json.load(f)
    return TileSample(
        *(planes[i].copy() for i in range(n_planes)),
        elev_deg=float(meta["elev_deg"]),
        az_deg=float(meta["az_deg"]),
        alt_km=float(meta["alt_km"]),
        normalizer=NormalizerState.from_dict(meta),
        geo=meta.get("geo", {}),
        flags=flags,
    )


# -- conditioning-plane preparation ---------------------------------------------


def robust_minmax_plane(values: np.ndarray, lo_pct=1.0, hi_pct=99.0) -> np.ndarray:
    """Scale so the 1st/99th percentiles map to 0/1, clamped."""
    v = values[np.isfinite(values)]
    if v.size == 0:
        return np.zeros_like(values)
    lo, hi = np.percentile(v, [lo_pct, hi_pct])
    if hi - lo < 1e-12:
        return np.zeros_like(values)
    return np.clip((values - lo) / (hi - lo), 0.0, 1.0)


def aspect_planes(aspect_deg: np.ndarray, flat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sine-cosine embedding of aspect; flat pixels encode (0, 0)."""
    rad = np.radians(np.where(np.isfinite(aspect_deg), aspect_deg, 0.0))
    s = np.sin(rad)
    c = np.cos(rad)
    s[flat] = 0.0
    c[flat] = 0.0
    return s, c


def build_tile(dem: RasterGrid, derivs: TerrainDerivatives, landcover: RasterGrid,
               obs_db: np.ndarray, mask: np.ndarray,
               geometry: tuple[float, float, float],
               normalizer: NormalizerState, flags: int = 0) -> TileSample:
    """Assemble one training tile from rasters + sparse dB observations.

    obs_db must be finite at mask==1 pixels; unobserved pixels of the
    observation plane are written as zeros.
    """
    from .diffusion import normalize

    mask = np.asarray(mask, dtype=np.float64)
    obs_z = np.zeros_like(mask)
    observed = mask == 1
    if observed.any():
        obs_z[observed] = normalize(normalizer, np.asarray(obs_db, dtype=np.float64)[observed])
    a_sin, a_cos = aspect_planes(derivs.aspect_deg, derivs.flat)
    el, az, alt = geometry
    return TileSample(
        dem_norm=robust_minmax_plane(np.where(dem.valid_mask(), dem.values, np.nan)),
        slope_norm=np.clip(np.nan_to_num(derivs.slope_deg) / 90.0, 0.0, 1.0),
        aspect_sin=a_sin,
        aspect_cos=a_cos,
        landcover=np.nan_to_num(landcover.values),
        obs_z=obs_z,
        mask=mask,
        elev_deg=el, az_deg=az, alt_km=alt,
        normalizer=normalizer,
        geo={"origin_x": dem.origin_x, "origin_y": dem.origin_y,
             "cell_size": dem.cell_size},
        flags=flags,
    )


def import_predictions(paths, floor_db: float = -30.0) -> list[tuple[RasterGrid, dict]]:
    """Read prediction tiles back as denormalized dB rasters + metadata.

    Predicted z-values far below the fitted range denormalize to huge
    negative excess losses; floor_db caps how much "gain" a prediction is
    allowed to claim (multipath gain is at most a few dB in practice).
    """
    from .diffusion import denormalize

    out = []
    for p in paths:
        tile = read_tile(p)
        m_db = denormalize(tile.normalizer, tile.obs_z.astype(np.float64))
        m_db = np.maximum(m_db, floor_db)
        geo = tile.geo or {"origin_x": 0.0, "origin_y": 0.0, "cell_size": 1.0}
        h, w = tile.shape
        grid = RasterGrid(
            origin_x=float(geo["origin_x"]), origin_y=float(geo["origin_y"]),
            cell_size=float(geo["cell_size"]), width=w, height=h,
            nodata=-9999.0, values=m_db,
        )
        meta = {
            "elev_deg": tile.elev_deg, "az_deg": tile.az_deg, "alt_km": tile.alt_km,
            "flags": tile.flags, "observed_fraction": tile.observed_fraction,
        }
        out.append((grid, meta))
    return out
