"""Conditional noise predictor: a residual MLP over the flattened window.

Layout, with row-vector convention ``y = x @ W + b``::

    v   = [noisy_target | cond_values | cond_mask]        (3KL)
    e   = silu(emb(t) @ emb1_w + emb1_b) @ emb2_w + emb2_b
    h   = silu(v @ in_w + in_b + e)
    h  += silu(h @ w1 + b1) @ w2 + b2                      (per block)
    out = h @ out_w + out_b                                (KL -> K x L)

Every function accepts either a single K x L input or a batch shaped
(n, K, L) with ``t`` of shape (n,).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import DiffusionConfig, ModelParams, param_shapes


@dataclass(frozen=True)
class DenoiserInput:
    noisy_target: np.ndarray
    cond_values: np.ndarray
    cond_mask: np.ndarray
    t: int | np.ndarray

    @property
    def batched(self) -> bool:
        return np.ndim(self.noisy_target) == 3


def step_embedding(t, D: int) -> np.ndarray:
    """Sinusoidal embedding; entry 2i is sin(t / 10000^(2i/D)), entry 2i+1 the cosine."""
    if D % 2:
        raise ValueError(f"embedding dimension must be even, got {D}")
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0):
        raise ValueError("step index must be non-negative")
    freqs = 10000.0 ** (-np.arange(0, D, 2, dtype=np.float64) / D)
    angles = t_arr[..., None] * freqs
    out = np.empty(t_arr.shape + (D,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def init_params(K: int, L: int, cfg: DiffusionConfig, seed: int | None = None) -> ModelParams:
    """Glorot-uniform hidden weights, zero biases, zero output projection."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    shapes = param_shapes(K, L, cfg.hidden_width, cfg.residual_blocks, cfg.step_embed_dim)
    tensors = {}
    for name, shape in shapes.items():
        if len(shape) == 1 or name == "out_w":
            tensors[name] = np.zeros(shape)
        else:
            s = np.sqrt(6.0 / (shape[0] + shape[1]))
            tensors[name] = rng.uniform(-s, s, size=shape)
    return ModelParams(K, L, cfg.hidden_width, cfg.residual_blocks, cfg.step_embed_dim, tensors)


def _as_batch(params: ModelParams, inp: DenoiserInput):
    K, L = params.K, params.L
    arrays = [np.asarray(a, dtype=np.float64) for a in (inp.noisy_target, inp.cond_values, inp.cond_mask)]
    single = arrays[0].ndim == 2
    if single:
        arrays = [a[None] for a in arrays]
    n = arrays[0].shape[0]
    for a in arrays:
        if a.shape != (n, K, L):
            raise ValueError(f"input shape {a.shape[1:] if single else a.shape} does not match ({K}, {L})")
    t = np.broadcast_to(np.asarray(inp.t), (n,))
    v = np.concatenate([a.reshape(n, K * L) for a in arrays], axis=1)
    return v, t, single


def _forward(params: ModelParams, v: np.ndarray, t: np.ndarray, keep: bool):
    p = params.tensors
    emb = step_embedding(t, params.D)
    a1 = emb @ p["emb1_w"] + p["emb1_b"]
    s1 = kernels.silu(a1)
    e = s1 @ p["emb2_w"] + p["emb2_b"]
    pre = v @ p["in_w"] + p["in_b"] + e
    h = kernels.silu(pre)
    blocks = []
    for i in range(params.B):
        u = h @ p[f"block{i}_w1"] + p[f"block{i}_b1"]
        su = kernels.silu(u)
        if keep:
            blocks.append((h, u, su))
        h = h + su @ p[f"block{i}_w2"] + p[f"block{i}_b2"]
    out = h @ p["out_w"] + p["out_b"]
    cache = (emb, a1, s1, pre, blocks, h) if keep else None
    return out, cache


def forward(params: ModelParams, inp: DenoiserInput) -> np.ndarray:
    """Predicted noise, shaped like ``inp.noisy_target``."""
    v, t, single = _as_batch(params, inp)
    out, _ = _forward(params, v, t, keep=False)
    out = out.reshape(-1, params.K, params.L)
    return out[0] if single else out


def forward_backward(params: ModelParams, inp: DenoiserInput, upstream):
    """Return ``(eps_hat, grads)`` where grads are d<upstream, eps_hat>/dparams summed over the batch.

    ``upstream`` may be a callable taking eps_hat and returning the upstream
    gradient, so loss gradients need only one forward pass.
    """
    v, t, single = _as_batch(params, inp)
    n = v.shape[0]
    out, (emb, a1, s1, pre, blocks, h) = _forward(params, v, t, keep=True)
    if callable(upstream):
        shaped = out.reshape(-1, params.K, params.L)
        upstream = upstream(shaped[0] if single else shaped)
    expected = (params.K, params.L) if single else (n, params.K, params.L)
    if np.shape(upstream) != expected:
        raise ValueError(f"upstream shape {np.shape(upstream)} does not match output {expected}")
    g_out = np.asarray(upstream, dtype=np.float64).reshape(n, -1)

    p = params.tensors
    grads = {}
    grads["out_w"] = h.T @ g_out
    grads["out_b"] = g_out.sum(axis=0)
    g_h = g_out @ p["out_w"].T
    for i in reversed(range(params.B)):
        h_in, u, su = blocks[i]
        grads[f"block{i}_w2"] = su.T @ g_h
        grads[f"block{i}_b2"] = g_h.sum(axis=0)
        g_u = (g_h @ p[f"block{i}_w2"].T) * kernels.silu_grad(u)
        grads[f"block{i}_w1"] = h_in.T @ g_u
        grads[f"block{i}_b1"] = g_u.sum(axis=0)
        g_h = g_h + g_u @ p[f"block{i}_w1"].T
    g_pre = g_h * kernels.silu_grad(pre)
    grads["in_w"] = v.T @ g_pre
    grads["in_b"] = g_pre.sum(axis=0)
    grads["emb2_w"] = s1.T @ g_pre
    grads["emb2_b"] = g_pre.sum(axis=0)
    g_a1 = (g_pre @ p["emb2_w"].T) * kernels.silu_grad(a1)
    grads["emb1_w"] = emb.T @ g_a1
    grads["emb1_b"] = g_a1.sum(axis=0)

    grads = {name: grads[name] for name in params.tensors}
    out = out.reshape(-1, params.K, params.L)
    return (out[0] if single else out), grads


def backward(params: ModelParams, inp: DenoiserInput, upstream: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradients of <upstream, forward(params, inp)> for every parameter tensor."""
    return forward_backward(params, inp, upstream)[1]


class CountingDenoiser:
    """Wraps ``forward`` and counts calls; each batched call is one evaluation per row."""

    def __init__(self, params: ModelParams):
        self.params = params
        self.calls = 0
        self.rows = 0

    def __call__(self, inp: DenoiserInput) -> np.ndarray:
        out = forward(self.params, inp)
        self.calls += 1
        self.rows += out.shape[0] if out.ndim == 3 else 1
        return out
