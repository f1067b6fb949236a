"""Noise schedules and the closed-form forward (noising) process."""
from __future__ import annotations

import numpy as np

from .core import ConfigError, DiffusionConfig, NoiseSchedule


def make_schedule(T: int, beta_min: float, beta_max: float, kind: str = "quadratic") -> NoiseSchedule:
    if T < 2:
        raise ConfigError(f"schedule needs T >= 2, got {T}")
    if not 0 < beta_min < beta_max < 1:
        raise ConfigError("need 0 < beta_min < beta_max < 1")
    frac = np.arange(T, dtype=np.float64) / (T - 1)
    if kind == "linear":
        beta = beta_min + frac * (beta_max - beta_min)
    elif kind == "quadratic":
        lo, hi = np.sqrt(beta_min), np.sqrt(beta_max)
        beta = (lo + frac * (hi - lo)) ** 2
        # pin endpoints against rounding in the square
        beta[0], beta[-1] = beta_min, beta_max
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}")

    beta = np.concatenate([[0.0], beta])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    alpha_bar[0] = 1.0
    for arr in (beta, alpha, alpha_bar):
        arr.setflags(write=False)
    return NoiseSchedule(beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def build_schedule(cfg: DiffusionConfig) -> NoiseSchedule:
    return make_schedule(cfg.T, cfg.beta_min, cfg.beta_max, cfg.schedule_kind)


def forward_noise(x0: np.ndarray, t: int, sched: NoiseSchedule, eps: np.ndarray) -> np.ndarray:
    """Sample x_t given x_0 using the marginal sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps."""
    sched.check_step(int(t))
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"x0 {x0.shape} and eps {eps.shape} differ in shape")
    ab = sched.alpha_bar[t]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def forward_noise_batch(x0: np.ndarray, t: np.ndarray, sched: NoiseSchedule, eps: np.ndarray) -> np.ndarray:
    """Vectorized ``forward_noise`` over a leading batch axis with per-sample steps."""
    t = np.asarray(t)
    if t.min() < 1 or t.max() > sched.T:
        raise ValueError(f"steps must lie in [1, {sched.T}]")
    ab = sched.alpha_bar[t].reshape((-1,) + (1,) * (x0.ndim - 1))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
