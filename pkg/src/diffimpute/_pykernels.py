"""NumPy implementations of the hot kernels (used when the extension is unavailable)."""
from __future__ import annotations

import numpy as np


def silu(x: np.ndarray) -> np.ndarray:
    s = 0.5 * (1.0 + np.tanh(0.5 * x))
    return x * s


def silu_grad(x: np.ndarray) -> np.ndarray:
    s = 0.5 * (1.0 + np.tanh(0.5 * x))
    return s * (1.0 + x * (1.0 - s))


def ffill_rows(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    observed = np.asarray(mask) != 0
    K, L = values.shape
    cols = np.arange(L)
    # index of the latest observed column at or before each position
    last = np.maximum.accumulate(np.where(observed, cols, -1), axis=1)
    first = np.where(observed.any(axis=1), observed.argmax(axis=1), 0)
    src = np.where(last >= 0, last, first[:, None])
    out = np.take_along_axis(values, src, axis=1)
    out[~observed.any(axis=1)] = 0.0
    return np.where(observed, values, out)


def linear_rows(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    observed = np.asarray(mask) != 0
    out = np.zeros_like(values)
    cols = np.arange(values.shape[1], dtype=np.float64)
    for k in range(values.shape[0]):
        idx = np.flatnonzero(observed[k])
        if idx.size:
            # np.interp holds edge values outside the observed span
            out[k] = np.interp(cols, idx.astype(np.float64), values[k, idx])
            out[k, idx] = values[k, idx]
    return out


def quantiles(samples: np.ndarray, qs: np.ndarray) -> np.ndarray:
    """Linear-interpolation empirical quantiles along axis 0; returns shape (len(qs), ...)."""
    srt = np.sort(np.asarray(samples, dtype=np.float64), axis=0)
    n = srt.shape[0]
    pos = np.asarray(qs, dtype=np.float64) * (n - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, n - 1)
    frac = (pos - lo).reshape((-1,) + (1,) * (srt.ndim - 1))
    a, b = srt[lo], srt[hi]
    return a + frac * (b - a)


def pinball_crps(samples: np.ndarray, truth: np.ndarray, qs: np.ndarray) -> np.ndarray:
    """Per-entry mean of 2 * pinball(truth - q-quantile) over the levels ``qs``."""
    qs = np.asarray(qs, dtype=np.float64)
    qv = quantiles(samples, qs)
    u = np.asarray(truth, dtype=np.float64)[None] - qv
    lvl = qs.reshape((-1,) + (1,) * (u.ndim - 1))
    loss = u * (lvl - (u < 0))
    return 2.0 * loss.mean(axis=0)


def adam_step(p, g, m, v, lr, beta1, beta2, eps, step):
    """In-place bias-corrected Adam update on flat arrays."""
    if not (p.shape == g.shape == m.shape == v.shape):
        raise ValueError("adam_step arrays differ in length")
    step_size = lr / (1.0 - beta1**step)
    inv_sqrt_c2 = 1.0 / np.sqrt(1.0 - beta2**step)
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    p -= step_size * m / (np.sqrt(v) * inv_sqrt_c2 + eps)
