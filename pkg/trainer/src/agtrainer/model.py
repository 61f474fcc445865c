"""Dual-head U-Net denoiser conditioned on timestep and satellite geometry.

Encoder-bottleneck-decoder over the channel widths (default 32/64/128/256)
with residual blocks, strided-conv downsampling, and skip connections.
Land-cover class ids pass through a learnable embedding; the timestep and
geometry embeddings are summed and injected into every residual block.
The trunk bifurcates at the output into a regression head (the velocity
target) and a classification head (blockage logits).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn

N_LANDCOVER = 19


@dataclass
class TrainerConfig:
    epochs: int = 500
    batch_size: int = 16
    T: int = 250
    curriculum_epochs: int = 10
    curriculum_fraction: float = 0.2  # low-noise share of the schedule
    lambda_cls: float = 0.5
    gate_gamma: float = 1.0
    pad_batch: bool = True           # repeat tiles to fill short batches
    embed_dim: int = 4               # land-cover embedding width E
    widths: tuple = (32, 64, 128, 256)
    lr: float = 2e-4
    seed: int = 0

    def __post_init__(self):
        if len(self.widths) != 4:
            raise ValueError("widths must name 4 scales")
        if not self.curriculum_epochs < self.epochs:
            raise ValueError("curriculum_epochs must be < epochs")

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v)
                for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainerConfig":
        d = dict(d)
        if "widths" in d:
            d["widths"] = tuple(d["widths"])
        return cls(**d)


def _gn(channels: int) -> nn.GroupNorm:
    groups = min(8, channels)
    while channels % groups:
        groups -= 1
    return nn.GroupNorm(groups, channels)


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float32, device=t.device) / half
    )
    args = t.float()[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, emb_dim: int):
        super().__init__()
        self.norm1 = _gn(cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.emb_proj = nn.Linear(emb_dim, cout)
        self.norm2 = _gn(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()
        self.act = nn.SiLU()

    def forward(self, x, emb):
        h = self.conv1(self.act(self.norm1(x)))
        h = h + self.emb_proj(emb)[:, :, None, None]
        h = self.conv2(self.act(self.norm2(h)))
        return h + self.skip(x)


class DualHeadUNet(nn.Module):
    """f(x_t, t, cond, geo) -> (v prediction, blockage logits)."""

    N_RASTER_COND = 4  # dem, slope, aspect sin, aspect cos

    def __init__(self, cfg: TrainerConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.widths
        emb_dim = 4 * w[0]
        self.emb_dim = emb_dim

        self.t_mlp = nn.Sequential(
            nn.Linear(emb_dim, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim)
        )
        self.geo_mlp = nn.Sequential(
            nn.Linear(4, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim)
        )
        self.lc_embed = nn.Embedding(N_LANDCOVER, cfg.embed_dim)

        cin = 1 + self.N_RASTER_COND + cfg.embed_dim
        self.stem = nn.Conv2d(cin, w[0], 3, padding=1)

        self.enc_blocks = nn.ModuleList([ResBlock(w[i], w[i], emb_dim) for i in range(4)])
        self.downs = nn.ModuleList(
            [nn.Conv2d(w[i], w[i + 1], 3, stride=2, padding=1) for i in range(3)]
        )
        self.bottleneck = ResBlock(w[3], w[3], emb_dim)
        self.ups = nn.ModuleList(
            [nn.ConvTranspose2d(w[i + 1], w[i], 2, stride=2) for i in reversed(range(3))]
        )
        self.dec_blocks = nn.ModuleList(
            [ResBlock(2 * w[i], w[i], emb_dim) for i in reversed(range(3))]
        )
        self.out_norm = _gn(w[0])
        self.act = nn.SiLU()
        self.head_reg = nn.Conv2d(w[0], 1, 3, padding=1)
        self.head_cls = nn.Conv2d(w[0], 1, 3, padding=1)

    def forward(self, x_t, t, cond, lc_ids, geo):
        """x_t (B,1,H,W); cond (B,4,H,W); lc_ids (B,H,W) long; geo (B,4)."""
        dtype = self.stem.weight.dtype
        t_emb = sinusoidal_embedding(t, self.emb_dim).to(dtype)
        emb = self.t_mlp(t_emb) + self.geo_mlp(geo.to(dtype))
        lc = self.lc_embed(lc_ids).permute(0, 3, 1, 2)
        h = self.stem(torch.cat([x_t, cond, lc], dim=1))

        skips = []
        for i in range(3):
            h = self.enc_blocks[i](h, emb)
            skips.append(h)
            h = self.downs[i](h)
        h = self.enc_blocks[3](h, emb)
        h = self.bottleneck(h, emb)
        for up, block, skip in zip(self.ups, self.dec_blocks, reversed(skips)):
            h = up(h)
            h = block(torch.cat([h, skip], dim=1), emb)
        h = self.act(self.out_norm(h))
        return self.head_reg(h), self.head_cls(h)
