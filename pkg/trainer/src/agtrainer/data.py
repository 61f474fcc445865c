"""Tile loading and batch assembly."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .tiles import Tile, read_tile, scan_tiles

LOS_GUARD_DB = 1e-3  # observed excess above this counts as blocked


@dataclass
class TileBatchItem:
    x0: torch.Tensor      # (1, H, W) normalized observations (zeros unobserved)
    mask: torch.Tensor    # (1, H, W) binary
    cond: torch.Tensor    # (4, H, W) dem/slope/aspect planes
    lc_ids: torch.Tensor  # (H, W) long
    labels: torch.Tensor  # (1, H, W) blockage label at observed pixels
    geo: torch.Tensor     # (4,)
    tile: Tile
    path: str = ""


def geo_vector(tile: Tile) -> torch.Tensor:
    az = np.radians(tile.az_deg)
    return torch.tensor(
        [tile.elev_deg / 90.0, np.sin(az), np.cos(az), tile.alt_km / 1200.0],
        dtype=torch.float32,
    )


def prepare_tile(tile: Tile, path: str = "") -> TileBatchItem:
    obs_z = tile.obs_z.astype(np.float32)
    mask = tile.mask.astype(np.float32)
    cond = np.stack([
        tile.plane("dem_norm"), tile.plane("slope_norm"),
        tile.plane("aspect_sin"), tile.plane("aspect_cos"),
    ]).astype(np.float32)
    lc = np.clip(tile.plane("landcover"), 0, 18).astype(np.int64)
    obs_db = tile.denormalize_z(obs_z)
    labels = ((obs_db > LOS_GUARD_DB) & (mask == 1)).astype(np.float32)
    return TileBatchItem(
        x0=torch.from_numpy(obs_z)[None],
        mask=torch.from_numpy(mask)[None],
        cond=torch.from_numpy(cond),
        lc_ids=torch.from_numpy(lc),
        labels=torch.from_numpy(labels)[None],
        geo=geo_vector(tile),
        tile=tile,
        path=str(path),
    )


def load_dataset(tiles_dir) -> list[TileBatchItem]:
    items = []
    skipped = 0
    for p in scan_tiles(tiles_dir):
        try:
            items.append(prepare_tile(read_tile(p), path=p))
        except (ValueError, FileNotFoundError, KeyError) as e:
            skipped += 1
            print(f"warning: skipping corrupt tile {p}: {e}")
    if not items:
        raise RuntimeError(f"no readable AGX1 tiles under {tiles_dir} "
                           f"({skipped} corrupt)")
    return items


def collate(items: list[TileBatchItem]):
    return (
        torch.stack([i.x0 for i in items]),
        torch.stack([i.mask for i in items]),
        torch.stack([i.cond for i in items]),
        torch.stack([i.lc_ids for i in items]),
        torch.stack([i.labels for i in items]),
        torch.stack([i.geo for i in items]),
    )
