"""Noise schedule and v-parameterization identities (torch)."""

from __future__ import annotations

import math

import torch


class CosineSchedule:
    """Cumulative signal fractions alpha_bar[0..T], alpha_bar[0] = 1."""

    def __init__(self, T: int = 250, s: float = 0.008, floor: float = 1e-8):
        t = torch.arange(T + 1, dtype=torch.float64)
        f = torch.cos((t / T + s) / (1.0 + s) * math.pi / 2.0) ** 2
        ab = torch.clamp(f / f[0], floor, 1.0)
        ab[0] = 1.0
        self.alpha_bar = ab
        self.T = T

    def alpha(self, t) -> torch.Tensor:
        return torch.sqrt(self.alpha_bar[t])

    def sigma(self, t) -> torch.Tensor:
        return torch.sqrt(1.0 - self.alpha_bar[t])


def add_noise(schedule: CosineSchedule, x0: torch.Tensor, t: torch.Tensor,
              eps: torch.Tensor) -> torch.Tensor:
    """x_t = sqrt(ab_t) x0 + sqrt(1-ab_t) eps, t per batch element."""
    a = schedule.alpha(t).to(x0.dtype).view(-1, 1, 1, 1)
    s = schedule.sigma(t).to(x0.dtype).view(-1, 1, 1, 1)
    return a * x0 + s * eps


def v_target(schedule: CosineSchedule, x0: torch.Tensor, eps: torch.Tensor,
             t: torch.Tensor) -> torch.Tensor:
    a = schedule.alpha(t).to(x0.dtype).view(-1, 1, 1, 1)
    s = schedule.sigma(t).to(x0.dtype).view(-1, 1, 1, 1)
    return a * eps - s * x0


def x0_from_v(schedule: CosineSchedule, x_t: torch.Tensor, v: torch.Tensor,
              t: int) -> torch.Tensor:
    a = float(schedule.alpha(t))
    s = float(schedule.sigma(t))
    return a * x_t - s * v


def eps_from_v(schedule: CosineSchedule, x_t: torch.Tensor, v: torch.Tensor,
               t: int) -> torch.Tensor:
    a = float(schedule.alpha(t))
    s = float(schedule.sigma(t))
    return s * x_t + a * v
