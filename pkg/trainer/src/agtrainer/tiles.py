"""AGX1 tile container I/O, independent of the producing engine.

Byte-compatible with the channel engine's format: magic "AGX1",
little-endian header u32 x 5 (version, H, W, n_cond_channels, flags),
f32 planes [DEM_norm, slope_norm, aspect_sin, aspect_cos, landcover,
obs_z, mask], CRC32 footer over the plane payload, and a <name>.meta.json
sidecar with satellite geometry, normalizer state, and geo registration.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"AGX1"
VERSION = 1
N_COND_CHANNELS = 5
PLANE_NAMES = ("dem_norm", "slope_norm", "aspect_sin", "aspect_cos",
               "landcover", "obs_z", "mask")
FLAG_PREDICTION = 1

_HEADER = struct.Struct("<5I")


@dataclass
class Tile:
    planes: np.ndarray  # (7, H, W) float32 in PLANE_NAMES order
    elev_deg: float
    az_deg: float
    alt_km: float
    eta: float
    mu: float
    sigma: float
    geo: dict = field(default_factory=dict)
    flags: int = 0

    def __post_init__(self):
        self.planes = np.ascontiguousarray(self.planes, dtype=np.float32)
        if self.planes.ndim != 3 or self.planes.shape[0] != len(PLANE_NAMES):
            raise ValueError(f"expected ({len(PLANE_NAMES)}, H, W), got {self.planes.shape}")
        mask = self.mask
        if not np.all((mask == 0) | (mask == 1)):
            raise ValueError("mask plane must be binary")

    def plane(self, name: str) -> np.ndarray:
        return self.planes[PLANE_NAMES.index(name)]

    @property
    def obs_z(self) -> np.ndarray:
        return self.plane("obs_z")

    @property
    def mask(self) -> np.ndarray:
        return self.plane("mask")

    @property
    def shape(self) -> tuple[int, int]:
        return self.planes.shape[1:]

    def normalize_db(self, m_db: np.ndarray) -> np.ndarray:
        n = np.arcsinh(10.0 ** (np.asarray(m_db, dtype=np.float64) / 10.0) / self.eta)
        return (n - self.mu) / self.sigma

    def denormalize_z(self, z: np.ndarray) -> np.ndarray:
        n = np.asarray(z, dtype=np.float64) * self.sigma + self.mu
        return 10.0 * np.log10(self.eta * np.sinh(np.maximum(n, 1e-300)))


def write_tile(tile: Tile, path) -> None:
    path = Path(path)
    h, w = tile.shape
    payload = tile.planes.astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_HEADER.pack(VERSION, h, w, N_COND_CHANNELS, tile.flags))
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))
    meta = {
        "elev_deg": tile.elev_deg, "az_deg": tile.az_deg, "alt_km": tile.alt_km,
        "eta": tile.eta, "mu": tile.mu, "sigma": tile.sigma, "geo": tile.geo,
    }
    with open(path.with_suffix(path.suffix + ".meta.json"), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def read_tile(path) -> Tile:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 4 + _HEADER.size:
        raise ValueError(f"{path}: truncated header ({len(raw)} bytes)")
    version, h, w, n_cond, flags = _HEADER.unpack_from(raw, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    if n_cond != N_COND_CHANNELS:
        raise ValueError(f"{path}: expected {N_COND_CHANNELS} cond channels, got {n_cond}")
    need = len(PLANE_NAMES) * h * w * 4
    body = raw[4 + _HEADER.size:]
    if len(body) != need + 4:
        raise ValueError(f"{path}: expected {need + 4} bytes after header, got {len(body)}")
    payload, crc_raw = body[:need], body[need:]
    if zlib.crc32(payload) & 0xFFFFFFFF != struct.unpack("<I", crc_raw)[0]:
        raise ValueError(f"{path}: payload CRC mismatch")
    planes = np.frombuffer(payload, dtype="<f4").reshape(len(PLANE_NAMES), h, w).copy()
    meta = json.loads(path.with_suffix(path.suffix + ".meta.json").read_text())
    return Tile(
        planes=planes,
        elev_deg=float(meta["elev_deg"]), az_deg=float(meta["az_deg"]),
        alt_km=float(meta["alt_km"]),
        eta=float(meta["eta"]), mu=float(meta["mu"]), sigma=float(meta["sigma"]),
        geo=meta.get("geo", {}), flags=flags,
    )


def scan_tiles(tiles_dir) -> list[Path]:
    return sorted(Path(tiles_dir).glob("*.agx"))
