"""Reverse-process sampling: ancestral (T steps) and first-order ODE (M steps).

All samplers work on batches shaped (n, K, L) so that replicates of one
window run as one matrix product per step. Each replicate owns its own
random stream, so results do not depend on how replicates are batched.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import denoiser, kernels
from .core import DiffusionConfig, MaskPair, ModelParams, NoiseSchedule, Window, round_half_up
from .denoiser import DenoiserInput

EvalFn = Callable[[DenoiserInput], np.ndarray]


@dataclass(frozen=True)
class ImputationResult:
    median: np.ndarray
    q05: np.ndarray
    q95: np.ndarray
    target_mask: np.ndarray
    n_replicates: int
    denoiser_evals: int
    samples: np.ndarray | None = None


def _evaluator(params: ModelParams | EvalFn) -> EvalFn:
    if isinstance(params, ModelParams):
        return lambda inp: denoiser.forward(params, inp)
    return params


def _normals(rngs, shape) -> np.ndarray:
    if isinstance(rngs, np.random.Generator):
        return rngs.standard_normal(shape)
    return np.stack([r.standard_normal(shape[1:]) for r in rngs])


def ancestral_step(
    params: ModelParams | EvalFn,
    x_t: np.ndarray,
    cond: np.ndarray,
    cond_mask: np.ndarray,
    target_mask: np.ndarray,
    t: int,
    sched: NoiseSchedule,
    rng=None,
    *,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """One draw from p(x_{t-1} | x_t, cond) with variance beta_tilde_t.

    ``rng`` is a Generator or a sequence of them (one per batch row); ``noise``
    overrides the draw. Entries outside ``target_mask`` come back as 0.
    """
    sched.check_step(t)
    evaluate = _evaluator(params)
    x_t = np.asarray(x_t, dtype=np.float64) * target_mask
    eps_hat = evaluate(DenoiserInput(x_t, cond, cond_mask, t))
    a, ab, ab_prev = sched.alpha[t], sched.alpha_bar[t], sched.alpha_bar[t - 1]
    beta = sched.beta[t]
    mean = (x_t - (beta / np.sqrt(1.0 - ab)) * eps_hat) / np.sqrt(a)
    if t > 1:
        var = (1.0 - ab_prev) / (1.0 - ab) * beta
        if noise is None:
            noise = _normals(rng, x_t.shape)
        mean = mean + np.sqrt(var) * noise
    return mean * target_mask


def fast_schedule(T: int, M: int) -> list[int]:
    """M+1 uniformly spaced steps from T down to 0, rounded half-up and strictly decreasing."""
    if not 1 <= M <= T:
        raise ValueError(f"need 1 <= M <= T, got M={M}, T={T}")
    steps = []
    for i in range(M + 1):
        s = round_half_up(T - i * T / M)
        if not steps or s < steps[-1]:
            steps.append(s)
    steps[0], steps[-1] = T, 0
    return steps


def fast_step(
    params: ModelParams | EvalFn,
    x_s: np.ndarray,
    cond: np.ndarray,
    cond_mask: np.ndarray,
    target_mask: np.ndarray,
    s: int,
    s_next: int,
    sched: NoiseSchedule,
) -> np.ndarray:
    """Deterministic first-order update of the probability-flow ODE from step s to s_next."""
    if not sched.T >= s > s_next >= 0:
        raise ValueError(f"need T >= s > s_next >= 0, got s={s}, s_next={s_next}")
    evaluate = _evaluator(params)
    x_s = np.asarray(x_s, dtype=np.float64) * target_mask
    eps_hat = evaluate(DenoiserInput(x_s, cond, cond_mask, s))
    ab, ab_next = sched.alpha_bar[s], sched.alpha_bar[s_next]
    x0_hat = (x_s - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)
    if s_next == 0:
        return x0_hat * target_mask
    return (np.sqrt(ab_next) * x0_hat + np.sqrt(1.0 - ab_next) * eps_hat) * target_mask


def _prepare(window: Window, masks: MaskPair | None, n: int):
    if masks is None:
        masks = MaskPair.for_inference(window)
    else:
        masks.check_against(window.obs_mask)
    cond_mask = masks.cond_mask.astype(np.float64)
    target = masks.target_mask.astype(np.float64)
    cond = np.where(masks.cond_mask == 1, window.values, 0.0)
    rep = lambda a: np.broadcast_to(a, (n,) + a.shape)  # noqa: E731
    return masks, rep(cond), rep(cond_mask), rep(target)


def _assemble(window: Window, masks: MaskPair, imputed: np.ndarray) -> np.ndarray:
    return np.where(masks.target_mask == 1, imputed, window.values)


def _as_rngs(rng, n):
    if isinstance(rng, np.random.Generator):
        return rng
    rngs = list(rng)
    if len(rngs) != n:
        raise ValueError(f"expected {n} generators, got {len(rngs)}")
    return rngs


def ancestral_sample(
    params: ModelParams | EvalFn,
    window: Window,
    sched: NoiseSchedule,
    rng,
    masks: MaskPair | None = None,
    n: int | None = None,
) -> np.ndarray:
    """Run steps T..1 for the window's targets.

    Returns a K x L matrix when ``rng`` is one Generator and ``n`` is None,
    else an (n, K, L) stack, one row per generator.
    """
    single = n is None and isinstance(rng, np.random.Generator)
    n = 1 if single else (n or len(rng))
    masks, cond, cond_mask, target = _prepare(window, masks, n)
    if not masks.target_mask.any():
        out = np.broadcast_to(window.values, (n,) + window.shape).copy()
        return out[0] if single else out
    rngs = _as_rngs(rng, n)
    x = _normals(rngs, (n,) + window.shape) * target
    for t in range(sched.T, 0, -1):
        x = ancestral_step(params, x, cond, cond_mask, target, t, sched, rngs)
    out = _assemble(window, masks, x)
    return out[0] if single else out


def fast_sample(
    params: ModelParams | EvalFn,
    window: Window,
    sched: NoiseSchedule,
    M: int,
    rng,
    masks: MaskPair | None = None,
    n: int | None = None,
) -> np.ndarray:
    """Few-step deterministic sampler along ``fast_schedule(T, M)`` from a Gaussian start."""
    single = n is None and isinstance(rng, np.random.Generator)
    n = 1 if single else (n or len(rng))
    steps = fast_schedule(sched.T, M)
    masks, cond, cond_mask, target = _prepare(window, masks, n)
    if not masks.target_mask.any():
        out = np.broadcast_to(window.values, (n,) + window.shape).copy()
        return out[0] if single else out
    rngs = _as_rngs(rng, n)
    x = _normals(rngs, (n,) + window.shape) * target
    for s, s_next in zip(steps[:-1], steps[1:]):
        x = fast_step(params, x, cond, cond_mask, target, s, s_next, sched)
    out = _assemble(window, masks, x)
    return out[0] if single else out


def replicate_seed(base_seed: int, disk_id: str, replicate: int) -> np.random.SeedSequence:
    """Seed for one replicate: SeedSequence over (base seed, first 8 bytes of BLAKE2b(disk_id), index)."""
    digest = hashlib.blake2b(disk_id.encode("utf-8"), digest_size=8).digest()
    return np.random.SeedSequence([int(base_seed), int.from_bytes(digest, "little"), int(replicate)])


def replicate_rngs(base_seed: int, disk_id: str, n: int, start: int = 0) -> list[np.random.Generator]:
    return [np.random.default_rng(replicate_seed(base_seed, disk_id, r)) for r in range(start, start + n)]


def aggregate(samples: np.ndarray, window: Window, masks: MaskPair, evals: int = 0, keep_samples: bool = False):
    """Median and 5%/95% quantiles over the replicate axis, observed entries passed through."""
    qv = kernels.quantiles(samples, np.array([0.05, 0.5, 0.95]))
    q05, med, q95 = (_assemble(window, masks, q) for q in qv)
    return ImputationResult(
        median=med,
        q05=q05,
        q95=q95,
        target_mask=masks.target_mask,
        n_replicates=samples.shape[0],
        denoiser_evals=evals,
        samples=samples if keep_samples else None,
    )


def impute(
    params: ModelParams,
    window: Window,
    cfg: DiffusionConfig,
    mode: str = "ancestral",
    seed: int | None = None,
    *,
    masks: MaskPair | None = None,
    sched: NoiseSchedule | None = None,
    chunk: int | None = None,
    keep_samples: bool = False,
) -> ImputationResult:
    """Draw ``cfg.n_replicates`` samples for the window's targets and summarize them.

    ``denoiser_evals`` counts per-replicate network evaluations (T or M per
    replicate when targets exist).
    """
    from .schedule import build_schedule

    n = cfg.n_replicates
    if n < 1:
        raise ValueError("n_replicates must be >= 1")
    if mode not in ("ancestral", "fast"):
        raise ValueError(f"unknown sampling mode {mode!r}")
    sched = sched or build_schedule(cfg)
    base = cfg.seed if seed is None else seed
    counter = denoiser.CountingDenoiser(params)
    chunk = chunk or n
    parts = []
    for start in range(0, n, chunk):
        size = min(chunk, n - start)
        rngs = replicate_rngs(base, window.disk_id, size, start)
        if mode == "ancestral":
            parts.append(ancestral_sample(counter, window, sched, rngs, masks, size))
        else:
            parts.append(fast_sample(counter, window, sched, cfg.fast_steps, rngs, masks, size))
    samples = np.concatenate(parts)
    masks = masks or MaskPair.for_inference(window)
    return aggregate(samples, window, masks, counter.rows // n, keep_samples)


def impute_dataset(
    params: ModelParams,
    windows: Sequence[Window],
    cfg: DiffusionConfig,
    mode: str,
    seed: int | None = None,
    masks: Sequence[MaskPair] | None = None,
    keep_samples: bool = False,
) -> list[ImputationResult]:
    from .schedule import build_schedule

    sched = build_schedule(cfg)
    out = []
    for i, w in enumerate(windows):
        mp = masks[i] if masks is not None else None
        out.append(impute(params, w, cfg, mode, seed, masks=mp, sched=sched, keep_samples=keep_samples))
    return out
