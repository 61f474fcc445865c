"""Framework-independent diffusion math for channel-map completion.

Holds the robust asinh/z-score normalization of excess-loss observations,
the noise schedule and forward process, v-parameterization targets, the
soft-gating operator, and a deterministic DDIM inpainting sampler over a
pluggable denoiser callable. No neural network lives here; the sampler is
exact with an analytic oracle denoiser, which is its primary correctness
test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


# -- observation normalization -------------------------------------------------


@dataclass(frozen=True)
class NormalizerState:
    """Robust asinh + z-score transform of dB observations.

    eta scales linear power so the asinh knee sits at the 80th percentile;
    mu/sigma are the median and IQR-derived spread of the asinh values.
    """

    eta: float
    mu: float
    sigma: float

    def to_dict(self) -> dict:
        return {"eta": self.eta, "mu": self.mu, "sigma": self.sigma}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizerState":
        return cls(float(d["eta"]), float(d["mu"]), float(d["sigma"]))


def fit_normalizer(observations_db) -> NormalizerState:
    obs = np.asarray(observations_db, dtype=np.float64)
    obs = obs[np.isfinite(obs)]
    if obs.size < 10:
        raise ValueError(f"need at least 10 finite observations, got {obs.size}")
    m_lin = 10.0 ** (obs / 10.0)
    eta = float(np.percentile(m_lin, 80.0))
    if eta <= 0:
        raise ValueError("non-positive scale percentile")
    n = np.arcsinh(m_lin / eta)
    mu = float(np.median(n))
    q25, q75 = np.percentile(n, [25.0, 75.0])
    sigma = max(float(q75 - q25) / 1.349, 1e-6)
    return NormalizerState(eta=eta, mu=mu, sigma=sigma)


def normalize(state: NormalizerState, m_db):
    m_db = np.asarray(m_db, dtype=np.float64)
    if not np.all(np.isfinite(m_db)):
        raise ValueError("non-finite observation")
    n = np.arcsinh(10.0 ** (m_db / 10.0) / state.eta)
    return (n - state.mu) / state.sigma


def denormalize(state: NormalizerState, z):
    """Analytic inverse of normalize; n is floored just above zero so that
    arbitrarily negative model outputs stay representable."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite input")
    n = z * state.sigma + state.mu
    m_lin = state.eta * np.sinh(np.maximum(n, 1e-300))
    return 10.0 * np.log10(m_lin)


# -- noise schedule -------------------------------------------------------------


@dataclass
class NoiseSchedule:
    """Cumulative signal fractions alpha_bar[0..T], alpha_bar[0] = 1."""

    alpha_bar: np.ndarray

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if ab.ndim != 1 or len(ab) < 2:
            raise ValueError("alpha_bar must be a 1-D array of length T+1")
        if abs(ab[0] - 1.0) > 1e-12:
            raise ValueError("alpha_bar[0] must be 1")
        if np.any(np.diff(ab) >= 0):
            raise ValueError("alpha_bar must be strictly decreasing")
        if ab[-1] <= 0 or ab[-1] > 1:
            raise ValueError("alpha_bar must stay in (0, 1]")
        self.alpha_bar = ab

    @property
    def T(self) -> int:
        return len(self.alpha_bar) - 1

    def alpha(self, t: int) -> float:
        """Signal coefficient sqrt(alpha_bar_t)."""
        return math.sqrt(self.alpha_bar[t])

    def sigma(self, t: int) -> float:
        """Noise coefficient sqrt(1 - alpha_bar_t)."""
        return math.sqrt(1.0 - self.alpha_bar[t])


def cosine_schedule(T: int = 250, s: float = 0.008, floor: float = 1e-8) -> NoiseSchedule:
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos((t / T + s) / (1.0 + s) * math.pi / 2.0) ** 2
    ab = np.clip(f / f[0], floor, 1.0)
    ab[0] = 1.0
    return NoiseSchedule(ab)


def linear_schedule(T: int = 250, beta_start: float = 1e-4,
                    beta_end: float = 0.02) -> NoiseSchedule:
    # beta range is quoted for a 1000-step reference; rescale so the
    # terminal alpha_bar stays near zero for any T
    scale = 1000.0 / T
    betas = np.linspace(beta_start * scale, beta_end * scale, T)
    ab = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return NoiseSchedule(ab)


def make_schedule(kind: str = "cosine", T: int = 250) -> NoiseSchedule:
    if kind == "cosine":
        return cosine_schedule(T)
    if kind == "linear":
        return linear_schedule(T)
    raise ValueError(f"unknown schedule {kind!r}")


# -- forward / target / reconstruction ------------------------------------------


def forward_noise(x0: np.ndarray, t: int, schedule: NoiseSchedule,
                  rng: np.random.Generator | int | None = None,
                  eps: np.ndarray | None = None) -> np.ndarray:
    """x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps with unit Gaussian eps."""
    if not 1 <= t <= schedule.T:
        raise ValueError(f"t must be in [1, {schedule.T}], got {t}")
    if eps is None:
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        eps = rng.standard_normal(np.shape(x0))
    return schedule.alpha(t) * x0 + schedule.sigma(t) * eps


def v_target(x0: np.ndarray, eps: np.ndarray, t: int,
             schedule: NoiseSchedule) -> np.ndarray:
    """Velocity target v_t = alpha_t eps - sigma_t x0."""
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch {x0.shape} vs {eps.shape}")
    return schedule.alpha(t) * eps - schedule.sigma(t) * x0


def reconstruct_x0(x_t: np.ndarray, v_pred: np.ndarray, t: int,
                   schedule: NoiseSchedule) -> np.ndarray:
    """Clean-signal estimate x0_hat = sqrt(ab_t) x_t - sqrt(1-ab_t) v."""
    x_t = np.asarray(x_t)
    v_pred = np.asarray(v_pred)
    if x_t.shape != v_pred.shape:
        raise ValueError(f"shape mismatch {x_t.shape} vs {v_pred.shape}")
    return schedule.alpha(t) * x_t - schedule.sigma(t) * v_pred


def eps_from_v(x_t: np.ndarray, v_pred: np.ndarray, t: int,
               schedule: NoiseSchedule) -> np.ndarray:
    """Implied noise eps_hat = sigma_t x_t + alpha_t v."""
    return schedule.sigma(t) * x_t + schedule.alpha(t) * v_pred


def soft_gate(x_raw: np.ndarray, m_prob: np.ndarray, gamma: float) -> np.ndarray:
    """Hadamard gating x * m^gamma; m in [0,1] is a blockage probability."""
    m_prob = np.asarray(m_prob, dtype=np.float64)
    if np.any(m_prob < 0) or np.any(m_prob > 1):
        raise ValueError("m_prob must lie in [0, 1]")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return np.asarray(x_raw) * m_prob**gamma


# -- DDIM inpainting sampler ------------------------------------------------------


def ddim_inpaint(denoiser, x0_obs: np.ndarray, mask: np.ndarray, cond,
                 schedule: NoiseSchedule, seed: int = 0) -> np.ndarray:
    """Deterministic DDIM reverse pass anchored to sparse observations.

    denoiser(x_t, t, cond) -> v prediction. Each step re-noises the
    observed pixels to the target timestep and masks them into the
    proposal, so information diffuses outward without SNR discontinuities;
    the final state carries the observations bit-exactly where mask == 1.
    """
    mask = np.asarray(mask, dtype=np.float64)
    if not np.all((mask == 0.0) | (mask == 1.0)):
        raise ValueError("mask must be binary")
    x0_obs = np.asarray(x0_obs, dtype=np.float64)
    if x0_obs.shape != mask.shape:
        raise ValueError(f"shape mismatch {x0_obs.shape} vs {mask.shape}")
    rng = np.random.default_rng(seed)

    x_t = rng.standard_normal(x0_obs.shape)
    for t in range(schedule.T, 0, -1):
        try:
            v = denoiser(x_t, t, cond)
        except Exception as e:
            raise RuntimeError(f"denoiser failed at step t={t}: {e}") from e
        x0_hat = reconstruct_x0(x_t, v, t, schedule)
        eps_hat = eps_from_v(x_t, v, t, schedule)
        x_prev_pred = schedule.alpha(t - 1) * x0_hat + schedule.sigma(t - 1) * eps_hat
        if t - 1 > 0:
            noise = rng.standard_normal(x0_obs.shape)
        else:
            noise = 0.0  # alpha_bar[0] = 1: known plane is exactly x0_obs
        x_known = schedule.alpha(t - 1) * x0_obs + schedule.sigma(t - 1) * noise
        x_t = x_prev_pred * (1.0 - mask) + x_known * mask
    observed = mask == 1.0
    x_t[observed] = x0_obs[observed]  # final masking: bit-exact anchoring
    return x_t


def oracle_denoiser(x0_true: np.ndarray, schedule: NoiseSchedule):
    """Analytic denoiser returning the exact v for a known clean field.

    Inverts the forward relation for whatever x_t it is handed:
    eps_implied = (x_t - alpha_t x0) / sigma_t, v = alpha_t eps - sigma_t x0.
    Plugging this into the sampler must recover x0 to float tolerance.
    """
    x0_true = np.asarray(x0_true, dtype=np.float64)

    def denoiser(x_t, t, cond):
        a, s = schedule.alpha(t), schedule.sigma(t)
        eps_implied = (x_t - a * x0_true) / s
        return a * eps_implied - s * x0_true

    return denoiser
