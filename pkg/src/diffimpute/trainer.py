"""Self-supervised training of the noise predictor."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import denoiser, kernels
from .core import (
    DataError,
    DiffusionConfig,
    MaskPair,
    ModelParams,
    NoiseSchedule,
    NumericError,
    Window,
    param_shapes,
    round_half_up,
)
from .schedule import build_schedule, forward_noise_batch

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class SkipWindow(ValueError):
    """A window has too few observed entries to partition."""


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    @classmethod
    def zeros(cls, params: ModelParams) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like())


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    wall_clock_s: float = 0.0
    n_windows: int = 0
    skipped: list[str] = field(default_factory=list)
    params: ModelParams | None = None

    def to_dict(self) -> dict:
        return {
            "epoch_mean_loss": self.losses,
            "n_windows": self.n_windows,
            "skipped_windows": self.skipped,
            "wall_clock_s": self.wall_clock_s,
        }


def zero_preimpute(w: Window) -> Window:
    """Replace every unobserved entry with 0.0; observed entries and the mask are kept."""
    return w.replace(values=np.where(w.obs_mask == 1, w.values, 0.0))


def partition_mask(w: Window, ratio: float, rng: np.random.Generator) -> MaskPair:
    """Split the observed entries of ``w`` into conditioning and target sets."""
    if not 0 < ratio < 1:
        raise ValueError(f"mask ratio must lie in (0, 1), got {ratio}")
    observed = np.flatnonzero(w.obs_mask.ravel())
    n_obs = observed.size
    if n_obs < 2:
        raise SkipWindow(f"window {w.disk_id!r} has {n_obs} observed entries; need at least 2")
    n_target = min(max(round_half_up(ratio * n_obs), 1), n_obs - 1)
    chosen = rng.choice(observed, size=n_target, replace=False)
    target = np.zeros(w.obs_mask.size, dtype=np.int8)
    target[chosen] = 1
    target = target.reshape(w.obs_mask.shape)
    return MaskPair(w.obs_mask - target, target)


def _draw_noise(rng: np.random.Generator, target: np.ndarray) -> np.ndarray:
    return rng.standard_normal(target.shape) * target


def batch_loss_and_grads(
    params: ModelParams,
    values: np.ndarray,
    cond_mask: np.ndarray,
    target_mask: np.ndarray,
    t: np.ndarray,
    eps: np.ndarray,
    sched: NoiseSchedule,
):
    """Mean over the batch of per-window target-averaged squared noise error, with gradients.

    ``values`` must already be zero-imputed; arrays are shaped (n, K, L).
    """
    n = values.shape[0]
    target_mask = target_mask.astype(np.float64)
    cond_mask = cond_mask.astype(np.float64)
    n_target = target_mask.reshape(n, -1).sum(axis=1)
    if np.any(n_target == 0):
        raise ValueError("every sample needs at least one target entry")
    x_t = forward_noise_batch(values * target_mask, t, sched, eps) * target_mask
    inp = denoiser.DenoiserInput(x_t, values * cond_mask, cond_mask, t)
    scale = (2.0 / (n_target * n)).reshape(n, 1, 1)
    per_sample = None

    def upstream(eps_hat):
        nonlocal per_sample
        diff = (eps - eps_hat) * target_mask
        per_sample = (diff**2).reshape(n, -1).sum(axis=1) / n_target
        return -diff * scale

    _, grads = denoiser.forward_backward(params, inp, upstream)
    return per_sample, grads


def loss_and_grads(
    params: ModelParams,
    w: Window,
    mp: MaskPair,
    sched: NoiseSchedule,
    rng: np.random.Generator,
    *,
    t: int | None = None,
    eps: np.ndarray | None = None,
):
    """Loss of one window under a random diffusion step and noise draw, plus gradients.

    ``t`` and ``eps`` may be pinned for testing; otherwise they are drawn from ``rng``.
    """
    if not mp.target_mask.any():
        raise ValueError("empty target mask")
    if t is None:
        t = int(rng.integers(1, sched.T + 1))
    if eps is None:
        eps = _draw_noise(rng, mp.target_mask)
    eps = np.asarray(eps, dtype=np.float64) * mp.target_mask
    values = np.where(w.obs_mask == 1, w.values, 0.0)
    losses, grads = batch_loss_and_grads(
        params, values[None], mp.cond_mask[None], mp.target_mask[None], np.array([t]), eps[None], sched
    )
    return float(losses[0]), grads


def adam_update(params: ModelParams, grads: dict[str, np.ndarray], state: AdamState, lr: float):
    """One bias-corrected Adam step; returns new params and a new state."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {name}")
    step = state.step + 1
    p_new, m_new, v_new = {}, {}, {}
    for name, p in params.items():
        p_flat = p.ravel().copy()
        m_flat = state.m[name].ravel().copy()
        v_flat = state.v[name].ravel().copy()
        g = np.ascontiguousarray(grads[name], dtype=np.float64).ravel()
        kernels.adam_step(p_flat, g, m_flat, v_flat, lr, state.beta1, state.beta2, state.eps, step)
        p_new[name] = p_flat.reshape(p.shape)
        m_new[name] = m_flat.reshape(p.shape)
        v_new[name] = v_flat.reshape(p.shape)
    new_state = AdamState(m_new, v_new, step, state.beta1, state.beta2, state.eps)
    return params.like(p_new), new_state


def _stack(windows: Sequence[Window]):
    values = np.stack([np.where(w.obs_mask == 1, w.values, 0.0) for w in windows])
    return values


def train(
    dataset: Sequence[Window],
    cfg: DiffusionConfig,
    *,
    params: ModelParams | None = None,
    progress=None,
) -> tuple[ModelParams, TrainReport]:
    """Fit the noise predictor on pre-normalized windows.

    Each epoch shuffles the windows, draws a fresh mask partition, diffusion
    step and noise per window, and applies one Adam step per minibatch.
    Everything random derives from ``cfg.seed``.
    """
    if not dataset:
        raise DataError("training set is empty")
    K, L = dataset[0].shape
    if any(w.shape != (K, L) for w in dataset):
        raise DataError("all training windows must share one K x L shape")
    started = time.perf_counter()
    sched = build_schedule(cfg)
    if params is None:
        params = denoiser.init_params(K, L, cfg)
    # single flat buffer so one fused Adam call updates every tensor in place
    theta = np.concatenate([v.ravel() for v in params.tensors.values()])
    params = _views(params, theta)
    m_buf, v_buf = np.zeros_like(theta), np.zeros_like(theta)
    step = 0
    report = TrainReport(n_windows=len(dataset))

    rng = np.random.default_rng([cfg.seed, 0x7EA1])
    usable = []
    for w in dataset:
        if w.n_observed < 2:
            report.skipped.append(w.disk_id)
            log.warning("skipping window %s: fewer than 2 observed entries", w.disk_id)
        else:
            usable.append(zero_preimpute(w))
    if not usable:
        raise DataError("no window has enough observed entries to train on")
    values = _stack(usable)

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(usable))
        epoch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            cond, target = [], []
            for i in idx:
                mp = partition_mask(usable[i], cfg.mask_ratio, rng)
                cond.append(mp.cond_mask)
                target.append(mp.target_mask)
            cond = np.stack(cond)
            target = np.stack(target)
            t = rng.integers(1, sched.T + 1, size=len(idx))
            eps = rng.standard_normal(target.shape) * target
            per_sample, grads = batch_loss_and_grads(params, values[idx], cond, target, t, eps, sched)
            if not np.all(np.isfinite(per_sample)):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            g = np.concatenate([grads[k].ravel() for k in params.tensors])
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient at epoch {epoch}")
            step += 1
            kernels.adam_step(theta, g, m_buf, v_buf, cfg.learning_rate, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, step)
            epoch_losses.append(per_sample)
        mean_loss = float(np.concatenate(epoch_losses).mean())
        report.losses.append(mean_loss)
        if progress is not None:
            progress(epoch, mean_loss)
        log.info("epoch %d mean loss %.5f", epoch, mean_loss)
    if not params.all_finite():
        raise NumericError("training produced non-finite parameters")
    params = params.copy()
    report.wall_clock_s = time.perf_counter() - started
    report.params = params
    return params, report


def _views(params: ModelParams, flat: np.ndarray) -> ModelParams:
    tensors, offset = {}, 0
    for name, v in params.tensors.items():
        tensors[name] = flat[offset:offset + v.size].reshape(v.shape)
        offset += v.size
    return params.like(tensors)


# Checkpoint container:
#   8 bytes   magic b"DIFIMP01"
#   8 bytes   manifest length N, unsigned little-endian
#   N bytes   UTF-8 JSON manifest
#   payload   tensors in manifest order, float64 little-endian, C order
# The manifest holds format version, dims, config, tensor names/shapes/counts,
# byte order, dtype and a SHA-256 of the payload.
MAGIC = b"DIFIMP01"
FORMAT_VERSION = 1


def save_checkpoint(params: ModelParams, cfg: DiffusionConfig, path: str | Path, extra: dict | None = None) -> None:
    payload = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in params.tensors.values())
    manifest = {
        "format_version": FORMAT_VERSION,
        "dims": params.dims,
        "config": cfg.to_dict(),
        "byte_order": "little",
        "dtype": "float64",
        "tensors": [
            {"name": k, "shape": list(v.shape), "count": int(v.size)} for k, v in params.tensors.items()
        ],
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "extra": extra or {},
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(head)))
            fh.write(head)
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_checkpoint_manifest(path: str | Path) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<Q", raw[8:16])
    if 16 + n > len(raw):
        raise DataError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[16:16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt manifest ({exc})") from None
    return manifest, raw[16 + n:]


def load_checkpoint(path: str | Path) -> tuple[ModelParams, DiffusionConfig]:
    manifest, payload = read_checkpoint_manifest(path)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format version {manifest.get('format_version')}")
    if manifest.get("byte_order") != "little" or manifest.get("dtype") != "float64":
        raise DataError(f"{path}: unsupported element encoding")
    if len(payload) != manifest.get("payload_bytes"):
        raise DataError(f"{path}: payload has {len(payload)} bytes, manifest says {manifest.get('payload_bytes')}")
    if hashlib.sha256(payload).hexdigest() != manifest.get("payload_sha256"):
        raise DataError(f"{path}: payload checksum mismatch")
    cfg = DiffusionConfig.from_mapping(manifest["config"])
    dims = manifest["dims"]
    expected = param_shapes(dims["K"], dims["L"], dims["H"], dims["B"], dims["D"])
    entries = manifest["tensors"]
    if [e["name"] for e in entries] != list(expected):
        raise DataError(f"{path}: tensor list does not match dims {dims}")
    tensors, offset = {}, 0
    for e in entries:
        shape = tuple(e["shape"])
        if shape != expected[e["name"]] or e["count"] != int(np.prod(shape)):
            raise DataError(f"{path}: tensor {e['name']} shape {shape} inconsistent with dims {dims}")
        nbytes = 8 * e["count"]
        if offset + nbytes > len(payload):
            raise DataError(f"{path}: payload too short for {e['name']}")
        arr = np.frombuffer(payload, dtype="<f8", count=e["count"], offset=offset)
        tensors[e["name"]] = arr.astype(np.float64).reshape(shape)
        offset += nbytes
    if offset != len(payload):
        raise DataError(f"{path}: {len(payload) - offset} unexpected trailing bytes")
    if (dims["H"], dims["B"], dims["D"]) != (cfg.hidden_width, cfg.residual_blocks, cfg.step_embed_dim):
        raise DataError(f"{path}: dims {dims} disagree with stored config")
    params = ModelParams(dims["K"], dims["L"], dims["H"], dims["B"], dims["D"], tensors)
    return params, cfg
