"""Georeferenced raster grids and the two on-disk formats.

Supported inputs are the ESRI ASCII grid (6-line header + values) and the
project binary tile format AGT1. All grids live in a local projected CRS
with meter units; ``origin_x, origin_y`` is the lower-left corner of the
grid and values are stored row-major from the north-west corner, so row 0
is the northernmost row.
"""

from __future__ import annotations

import struct
import threading
import zlib
from dataclasses import dataclass, field

import numpy as np

from .config import N_LANDCOVER_CLASSES, landcover_table
from .errors import (
    NodataError,
    OutOfDomainError,
    RasterParseError,
    RasterValidationError,
)

AGT1_MAGIC = b"AGT1"

DEM_WINDOW_DEFAULT = (-500.0, 9000.0)


@dataclass
class RasterGrid:
    origin_x: float
    origin_y: float
    cell_size: float
    width: int
    height: int
    nodata: float
    values: np.ndarray  # float64, shape (height, width), row 0 = north

    def __post_init__(self):
        if self.cell_size <= 0:
            raise RasterValidationError(f"cell_size must be > 0, got {self.cell_size}")
        if self.width < 1 or self.height < 1:
            raise RasterValidationError(f"degenerate grid {self.width}x{self.height}")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.height, self.width):
            raise RasterValidationError(
                f"value array shape {self.values.shape} != ({self.height}, {self.width})"
            )
        self.values.setflags(write=False)  # immutable after load

    # -- geometry ----------------------------------------------------------

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) outer edges."""
        return (
            self.origin_x,
            self.origin_y,
            self.origin_x + self.width * self.cell_size,
            self.origin_y + self.height * self.cell_size,
        )

    def contains(self, x: float, y: float) -> bool:
        xmin, ymin, xmax, ymax = self.bounds
        return xmin <= x <= xmax and ymin <= y <= ymax

    def pixel_to_world(self, row: int, col: int) -> tuple[float, float]:
        """Center coordinates of pixel (row, col)."""
        x = self.origin_x + (col + 0.5) * self.cell_size
        y = self.origin_y + (self.height - row - 0.5) * self.cell_size
        return x, y

    def world_to_pixel(self, x: float, y: float) -> tuple[int, int]:
        """Pixel (row, col) containing world point (x, y)."""
        col = int(np.floor((x - self.origin_x) / self.cell_size))
        row = int(np.floor((self.origin_y + self.height * self.cell_size - y) / self.cell_size))
        # Points exactly on the top/right outer edge belong to the last pixel.
        col = min(max(col, 0), self.width - 1) if self.contains(x, y) else col
        row = min(max(row, 0), self.height - 1) if self.contains(x, y) else row
        return row, col

    def is_nodata(self, v) -> np.ndarray:
        return np.isclose(v, self.nodata, rtol=0.0, atol=1e-6) | ~np.isfinite(v)

    def valid_mask(self) -> np.ndarray:
        return ~self.is_nodata(self.values)

    def value_at(self, x: float, y: float) -> float:
        """Raw cell value at the pixel containing (x, y)."""
        if not self.contains(x, y):
            raise OutOfDomainError(f"point ({x}, {y}) outside grid bounds {self.bounds}")
        r, c = self.world_to_pixel(x, y)
        return float(self.values[r, c])


def sample_height(grid: RasterGrid, x: float, y: float) -> float:
    """Bilinear elevation at a world point.

    Interpolates the four surrounding cell centers; falls back to the
    nearest valid neighbor when one or more of them is nodata, and raises
    NodataError when all four are.
    """
    if not grid.contains(x, y):
        raise OutOfDomainError(f"point ({x}, {y}) outside grid bounds {grid.bounds}")

    # fractional position in cell-center coordinates
    fc = (x - grid.origin_x) / grid.cell_size - 0.5
    fr = (grid.origin_y + grid.height * grid.cell_size - y) / grid.cell_size - 0.5
    c0 = int(np.floor(fc))
    r0 = int(np.floor(fr))
    tc = fc - c0
    tr = fr - r0

    c0c = min(max(c0, 0), grid.width - 1)
    c1c = min(max(c0 + 1, 0), grid.width - 1)
    r0c = min(max(r0, 0), grid.height - 1)
    r1c = min(max(r0 + 1, 0), grid.height - 1)

    corners = np.array(
        [
            grid.values[r0c, c0c],
            grid.values[r0c, c1c],
            grid.values[r1c, c0c],
            grid.values[r1c, c1c],
        ]
    )
    weights = np.array(
        [
            (1 - tr) * (1 - tc),
            (1 - tr) * tc,
            tr * (1 - tc),
            tr * tc,
        ]
    )
    valid = ~grid.is_nodata(corners)
    if valid.all():
        return float(np.dot(weights, corners))
    if not valid.any():
        raise NodataError(f"all four neighbors of ({x}, {y}) are nodata")
    # nearest valid neighbor by interpolation weight
    order = np.argsort(-weights)
    for i in order:
        if valid[i]:
            return float(corners[i])
    raise NodataError(f"no valid neighbor at ({x}, {y})")  # unreachable


def effective_height(
    dem: RasterGrid,
    landcover: RasterGrid,
    x: float,
    y: float,
    classes: dict | None = None,
) -> float:
    """Terrain elevation plus the representative canopy height of the pixel's class."""
    classes = classes if classes is not None else landcover_table()
    h = sample_height(dem, x, y)
    cls_val = landcover.value_at(x, y)
    if landcover.is_nodata(cls_val):
        return h  # unclassified: bare terrain
    cid = int(round(cls_val))
    if cid not in classes:
        raise RasterValidationError(f"unknown land-cover class {cid} at ({x}, {y})")
    return h + classes[cid].canopy_height_m


def effective_height_cell(
    dem: RasterGrid,
    landcover: RasterGrid | None,
    row: int,
    col: int,
    classes: dict | None = None,
) -> float:
    """Per-cell effective height (no interpolation), as the tracer consumes it."""
    v = float(dem.values[row, col])
    if dem.is_nodata(v):
        raise NodataError(f"dem nodata at pixel ({row}, {col})")
    if landcover is None:
        return v
    x, y = dem.pixel_to_world(row, col)
    if not landcover.contains(x, y):
        return v
    classes = classes if classes is not None else landcover_table()
    cls_val = landcover.value_at(x, y)
    if landcover.is_nodata(cls_val):
        return v
    cid = int(round(cls_val))
    if cid not in classes:
        raise RasterValidationError(f"unknown land-cover class {cid} at pixel ({row}, {col})")
    return v + classes[cid].canopy_height_m


# -- loading ---------------------------------------------------------------

_ASCII_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


def _validate_band(grid: RasterGrid, band_kind: str, dem_window=DEM_WINDOW_DEFAULT):
    valid = grid.valid_mask()
    if band_kind == "dem":
        lo, hi = dem_window
        bad = valid & ((grid.values < lo) | (grid.values > hi))
        if bad.any():
            rows, cols = np.nonzero(bad)
            cells = ", ".join(
                f"({r},{c})={grid.values[r, c]:g}" for r, c in list(zip(rows, cols))[:10]
            )
            raise RasterValidationError(
                f"{int(bad.sum())} DEM value(s) outside [{lo}, {hi}]: {cells}"
            )
    elif band_kind in ("landcover", "function"):
        v = grid.values[valid]
        if v.size and (np.any(v != np.round(v))):
            raise RasterValidationError(f"{band_kind} band contains non-integer class ids")
        if band_kind == "landcover" and v.size:
            if v.min() < 0 or v.max() > N_LANDCOVER_CLASSES - 1:
                bad = v[(v < 0) | (v > N_LANDCOVER_CLASSES - 1)]
                raise RasterValidationError(
                    f"land-cover class ids must be 0..{N_LANDCOVER_CLASSES - 1}, "
                    f"found {sorted(set(bad.tolist()))}"
                )
    else:
        raise ValueError(f"unknown band_kind {band_kind!r}")


def load_ascii_grid(path, band_kind: str = "dem", dem_window=DEM_WINDOW_DEFAULT) -> RasterGrid:
    with open(path, "rb") as f:
        raw = f.read()

    header: dict[str, float] = {}
    offset = 0
    lines = raw.split(b"\n")
    for i in range(6):
        if i >= len(lines):
            raise RasterParseError("truncated header", byte_offset=offset)
        line = lines[i]
        parts = line.split()
        if len(parts) != 2:
            raise RasterParseError(f"bad header line {line!r}", byte_offset=offset)
        key = parts[0].decode("ascii", "replace").lower()
        if key not in _ASCII_HEADER_KEYS:
            raise RasterParseError(f"unknown header key {key!r}", byte_offset=offset)
        try:
            header[key] = float(parts[1])
        except ValueError:
            raise RasterParseError(f"non-numeric header value {parts[1]!r}", byte_offset=offset)
        offset += len(line) + 1

    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    if ncols < 1 or nrows < 1:
        raise RasterParseError(f"degenerate dimensions {ncols}x{nrows}", byte_offset=0)
    body = b"\n".join(lines[6:])
    try:
        values = np.array(body.split(), dtype=np.float64)
    except ValueError as e:
        raise RasterParseError(f"non-numeric cell value: {e}", byte_offset=offset)
    if values.size != ncols * nrows:
        raise RasterParseError(
            f"expected {ncols * nrows} values, found {values.size}", byte_offset=offset
        )
    grid = RasterGrid(
        origin_x=header["xllcorner"],
        origin_y=header["yllcorner"],
        cell_size=header["cellsize"],
        width=ncols,
        height=nrows,
        nodata=header["nodata_value"],
        values=values.reshape(nrows, ncols),
    )
    _validate_band(grid, band_kind, dem_window)
    return grid


def write_ascii_grid(grid: RasterGrid, path):
    with open(path, "w") as f:
        f.write(f"ncols {grid.width}\n")
        f.write(f"nrows {grid.height}\n")
        f.write(f"xllcorner {grid.origin_x!r}\n")
        f.write(f"yllcorner {grid.origin_y!r}\n")
        f.write(f"cellsize {grid.cell_size!r}\n")
        f.write(f"NODATA_value {grid.nodata!r}\n")
        for row in grid.values:
            f.write(" ".join(repr(float(v)) for v in row))
            f.write("\n")


_AGT1_HEADER = struct.Struct("<II d d d f")


def load_agt1(path, band_kind: str = "dem", dem_window=DEM_WINDOW_DEFAULT) -> RasterGrid:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4 or raw[:4] != AGT1_MAGIC:
        raise RasterParseError(f"bad magic {raw[:4]!r}, expected {AGT1_MAGIC!r}", byte_offset=0)
    if len(raw) < 4 + _AGT1_HEADER.size:
        raise RasterParseError("truncated AGT1 header", byte_offset=len(raw))
    width, height, ox, oy, cell, nodata = _AGT1_HEADER.unpack_from(raw, 4)
    if width < 1 or height < 1:
        raise RasterParseError(f"degenerate dimensions {width}x{height}", byte_offset=4)
    need = width * height * 4
    body = raw[4 + _AGT1_HEADER.size:]
    if len(body) != need:
        raise RasterParseError(
            f"expected {need} payload bytes, found {len(body)}",
            byte_offset=4 + _AGT1_HEADER.size,
        )
    values = np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(height, width)
    grid = RasterGrid(ox, oy, cell, width, height, float(nodata), values)
    _validate_band(grid, band_kind, dem_window)
    return grid


def write_agt1(grid: RasterGrid, path):
    with open(path, "wb") as f:
        f.write(AGT1_MAGIC)
        f.write(
            _AGT1_HEADER.pack(
                grid.width, grid.height, grid.origin_x, grid.origin_y,
                grid.cell_size, np.float32(grid.nodata),
            )
        )
        f.write(np.ascontiguousarray(grid.values, dtype="<f4").tobytes())


def load_raster(path, band_kind: str = "dem", dem_window=DEM_WINDOW_DEFAULT) -> RasterGrid:
    """Load either supported format, sniffing the AGT1 magic."""
    with open(path, "rb") as f:
        magic = f.read(4)
    if magic == AGT1_MAGIC:
        return load_agt1(path, band_kind, dem_window)
    return load_ascii_grid(path, band_kind, dem_window)


# -- tiling ----------------------------------------------------------------


@dataclass
class _TileSlot:
    bounds: tuple[float, float, float, float]
    path: str
    band_kind: str
    grid: RasterGrid | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)


class TileIndex:
    """Owns a set of edge-aligned tiles and serves lazy block access.

    Tiles may share edges but not interiors; any in-ROI point has exactly
    one owning tile (half-open boxes, outer boundary closed).
    """

    def __init__(self, entries: list[tuple[tuple[float, float, float, float], str]],
                 band_kind: str = "dem", dem_window=DEM_WINDOW_DEFAULT):
        if not entries:
            raise ValueError("empty tile index")
        self._tiles = []
        for bounds, path in entries:
            xmin, ymin, xmax, ymax = bounds
            if not (xmax > xmin and ymax > ymin):
                raise RasterValidationError(f"degenerate tile bounds {bounds}")
            self._tiles.append(_TileSlot(tuple(map(float, bounds)), str(path), band_kind))
        self._dem_window = dem_window
        for a in range(len(self._tiles)):
            for b in range(a + 1, len(self._tiles)):
                if self._interiors_overlap(self._tiles[a].bounds, self._tiles[b].bounds):
                    raise RasterValidationError(
                        f"tiles {a} and {b} overlap beyond shared edges"
                    )

    @staticmethod
    def _interiors_overlap(b1, b2) -> bool:
        return (b1[0] < b2[2] and b2[0] < b1[2]) and (b1[1] < b2[3] and b2[1] < b1[3])

    @classmethod
    def from_grids(cls, grids: list[RasterGrid]) -> "TileIndex":
        idx = cls.__new__(cls)
        idx._tiles = []
        idx._dem_window = DEM_WINDOW_DEFAULT
        for g in grids:
            slot = _TileSlot(g.bounds, "<memory>", "dem")
            slot.grid = g
            idx._tiles.append(slot)
        return idx

    def __len__(self):
        return len(self._tiles)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        xs0, ys0, xs1, ys1 = zip(*(t.bounds for t in self._tiles))
        return min(xs0), min(ys0), max(xs1), max(ys1)

    def tile_bounds(self) -> list[tuple[float, float, float, float]]:
        return [t.bounds for t in self._tiles]

    def owner(self, x: float, y: float) -> int:
        """Index of the single tile owning (x, y)."""
        half_open = []
        closed = []
        for i, t in enumerate(self._tiles):
            xmin, ymin, xmax, ymax = t.bounds
            if xmin <= x <= xmax and ymin <= y <= ymax:
                closed.append(i)
                if x < xmax and y < ymax:
                    half_open.append(i)
        if not closed:
            raise OutOfDomainError(f"point ({x}, {y}) outside every tile")
        if half_open:
            return half_open[0]
        return closed[0]  # point on the ROI's outer max edge

    def load(self, i: int) -> RasterGrid:
        """Idempotent lazy load; concurrent first access loads once."""
        slot = self._tiles[i]
        if slot.grid is not None:
            return slot.grid
        with slot.lock:
            if slot.grid is None:
                slot.grid = load_raster(slot.path, slot.band_kind, self._dem_window)
        return slot.grid

    def grid_at(self, x: float, y: float) -> RasterGrid:
        return self.load(self.owner(x, y))


def crc32_of(data: bytes) -> int:
    return zlib.crc32(data) & 0xFFFFFFFF
