"""Inference: DDIM inpainting anchored to observations, then soft gating.

Each reverse step re-noises the observed pixels to the target timestep and
masks them into the proposal; the final field keeps observations exactly
and gates unobserved regression output by the blockage probability raised
to gamma, suppressing background residue in unobstructed regions.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .data import prepare_tile
from .model import DualHeadUNet, TrainerConfig
from .schedule import CosineSchedule, eps_from_v, x0_from_v
from .tiles import FLAG_PREDICTION, PLANE_NAMES, Tile, read_tile, scan_tiles, write_tile


@torch.no_grad()
def inpaint_tile(model: DualHeadUNet, cfg: TrainerConfig, item, seed: int = 0):
    """Returns (x0_final, m_prob) as (H, W) tensors in normalized space."""
    schedule = CosineSchedule(cfg.T)
    generator = torch.Generator().manual_seed(seed)
    x0_obs = item.x0[None]
    mask = item.mask[None]
    cond = item.cond[None]
    lc = item.lc_ids[None]
    geo = item.geo[None]
    if x0_obs.shape[-1] % 8 or x0_obs.shape[-2] % 8:
        raise ValueError(
            f"tile shape {tuple(x0_obs.shape[-2:])} incompatible with the "
            f"3-level U-Net (model needs multiples of 8)"
        )

    x_t = torch.randn(x0_obs.shape, generator=generator)
    m_prob = torch.zeros_like(x0_obs)
    for t in range(schedule.T, 0, -1):
        t_vec = torch.full((1,), t, dtype=torch.long)
        v_pred, logits = model(x_t, t_vec, cond, lc, geo)
        x0_hat = x0_from_v(schedule, x_t, v_pred, t)
        eps_hat = eps_from_v(schedule, x_t, v_pred, t)
        a_prev = float(schedule.alpha(t - 1))
        s_prev = float(schedule.sigma(t - 1))
        x_prev = a_prev * x0_hat + s_prev * eps_hat
        if t - 1 > 0:
            noise = torch.randn(x0_obs.shape, generator=generator)
        else:
            noise = torch.zeros_like(x0_obs)
        x_known = a_prev * x0_obs + s_prev * noise
        x_t = x_prev * (1.0 - mask) + x_known * mask
        if t == 1:
            m_prob = torch.sigmoid(logits)

    gated = x_t * (1.0 - mask) * m_prob**cfg.gate_gamma + x0_obs * mask
    return gated[0, 0], m_prob[0, 0]


def predict(checkpoint_path, tiles_dir, out_dir, seed: int = 0) -> list[str]:
    from .train import load_checkpoint

    model, cfg = load_checkpoint(checkpoint_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for p in scan_tiles(tiles_dir):
        tile = read_tile(p)
        item = prepare_tile(tile, path=p)
        x0_final, _ = inpaint_tile(model, cfg, item, seed=seed)
        planes = tile.planes.copy()
        planes[PLANE_NAMES.index("obs_z")] = x0_final.numpy().astype(np.float32)
        planes[PLANE_NAMES.index("mask")] = np.ones(tile.shape, dtype=np.float32)
        pred = Tile(
            planes=planes, elev_deg=tile.elev_deg, az_deg=tile.az_deg,
            alt_km=tile.alt_km, eta=tile.eta, mu=tile.mu, sigma=tile.sigma,
            geo=tile.geo, flags=tile.flags | FLAG_PREDICTION,
        )
        dest = out / p.name
        write_tile(pred, dest)
        written.append(str(dest))
    return written


def evaluate(pred_dir, truth_dir) -> dict:
    """Mean absolute error in dB between prediction and truth tiles."""
    preds = {p.name: p for p in scan_tiles(pred_dir)}
    truths = {p.name: p for p in scan_tiles(truth_dir)}
    common = sorted(set(preds) & set(truths))
    if not common:
        raise RuntimeError("no matching tile names between prediction and truth dirs")
    per_tile = {}
    for name in common:
        pred = read_tile(preds[name])
        truth = read_tile(truths[name])
        err = np.abs(pred.denormalize_z(pred.obs_z) - truth.denormalize_z(truth.obs_z))
        per_tile[name] = float(err.mean())
    return {"per_tile_mae_db": per_tile,
            "mae_db": float(np.mean(list(per_tile.values())))}


def write_eval(report: dict, out_path):
    with open(out_path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
