"""Training loop: masked v-regression + blockage classification.

The loss is evaluated only at observed pixels. A curriculum restricts the
first epochs to the low-noise end of the schedule before opening the full
timestep range, which shows up as a transient loss rise at the switch.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import torch
import torch.nn.functional as F

from .data import collate, load_dataset
from .model import DualHeadUNet, TrainerConfig
from .schedule import CosineSchedule, add_noise, v_target


def composite_loss(model, schedule, batch, t, lambda_cls, lambda_t=1.0,
                   generator=None):
    x0, mask, cond, lc_ids, labels, geo = batch
    eps = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    x_t = add_noise(schedule, x0, t, eps)
    v_true = v_target(schedule, x0, eps, t)
    v_pred, logits = model(x_t, t, cond, lc_ids, geo)

    denom = mask.sum().clamp(min=1.0)
    reg = (lambda_t * (v_pred - v_true) ** 2 * mask).sum() / denom
    if lambda_cls > 0.0:
        cls = (F.binary_cross_entropy_with_logits(
            logits, labels, reduction="none") * mask).sum() / denom
        return reg + lambda_cls * cls, float(reg.detach()), float(cls.detach())
    return reg, float(reg.detach()), 0.0


def sample_timesteps(schedule, n, epoch, cfg, generator):
    if epoch < cfg.curriculum_epochs:
        hi = max(int(cfg.curriculum_fraction * schedule.T), 1)
    else:
        hi = schedule.T
    return torch.randint(1, hi + 1, (n,), generator=generator)


def train(tiles_dir, out_dir, cfg: TrainerConfig | None = None,
          log_every: int = 0) -> dict:
    cfg = cfg if cfg is not None else TrainerConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.seed)
    generator = torch.Generator().manual_seed(cfg.seed)

    items = load_dataset(tiles_dir)
    schedule = CosineSchedule(cfg.T)
    model = DualHeadUNet(cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)

    history = []
    for epoch in range(cfg.epochs):
        order = torch.randperm(len(items), generator=generator).tolist()
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            batch_items = [items[i] for i in order[start:start + cfg.batch_size]]
            if cfg.pad_batch and len(batch_items) < cfg.batch_size:
                # short dataset: repeat tiles so every step still sees a
                # full batch of independent (t, eps) draws
                reps = -(-cfg.batch_size // len(batch_items))
                batch_items = (batch_items * reps)[:cfg.batch_size]
            batch = collate(batch_items)
            t = sample_timesteps(schedule, len(batch_items), epoch, cfg, generator)
            loss, reg, cls = composite_loss(
                model, schedule, batch, t, cfg.lambda_cls, generator=generator
            )
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss.detach())
            n_batches += 1
        history.append(epoch_loss / n_batches)
        if log_every and (epoch + 1) % log_every == 0:
            print(f"epoch {epoch + 1}/{cfg.epochs} loss {history[-1]:.6f}")

    ckpt_path = out / "checkpoint.pt"
    torch.save({"state_dict": model.state_dict(), "config": cfg.to_dict()}, ckpt_path)
    with open(out / "training_log.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(history):
            w.writerow([i + 1, repr(v)])
    with open(out / "train.json", "w") as f:
        json.dump({"epochs": cfg.epochs, "final_loss": history[-1],
                   "n_tiles": len(items)}, f, indent=2, sort_keys=True)
        f.write("\n")
    return {"history": history, "checkpoint": str(ckpt_path), "model": model}


def load_checkpoint(path) -> tuple[DualHeadUNet, TrainerConfig]:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    cfg = TrainerConfig.from_dict(blob["config"])
    model = DualHeadUNet(cfg)
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model, cfg
