"""Synthetic SMART-like windows, missingness injection, normalization and NDJSON I/O.

Generator model, per disk and feature k (deviation d = x - mu_k):

    d[k, 0] = noise_scale * sigma_k / sqrt(1 - phi^2) * z[k, 0]
    d[k, l] = phi * d[k, l-1] + noise_scale * sigma_k * z[k, l]
    z[k, l] = sqrt(rho) * u[l] + sqrt(1 - rho) * v[k, l]

where u is a per-disk innovation shared by all features (``common_factor``
rho) and v, u are standard normal. Per disk, mu_k = base_k + scale_k * U(-2, 2)
and sigma_k = scale_k * U(0.8, 1.2), with base_k = 10 * (k + 1) and
scale_k = 1 + (k mod 3). Failing disks add
drift_rate * sigma_k * max(0, l - onset) to the dataset's degrading features
and double the noise there after onset; onset ~ U[L/4, 3L/4].
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import DataError, Window

log = logging.getLogger(__name__)

STD_FLOOR = 1e-6


@dataclass(frozen=True)
class GenConfig:
    n_disks: int = 500
    K: int = 8
    L: int = 72
    failure_rate: float = 0.15
    ar_coefficient: float = 0.8
    noise_scale: float = 1.0
    drift_rate: float = 0.15
    n_degrading: int = 2
    common_factor: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.failure_rate <= 1:
            raise ValueError("failure_rate must lie in [0, 1]")
        if not abs(self.ar_coefficient) < 1:
            raise ValueError("|ar_coefficient| must be < 1")
        if self.L < 4 or self.K < 1 or self.n_disks < 0:
            raise ValueError("need L >= 4, K >= 1, n_disks >= 0")
        if not 0 <= self.common_factor <= 1:
            raise ValueError("common_factor must lie in [0, 1]")
        if not 0 <= self.n_degrading <= self.K:
            raise ValueError("n_degrading must lie in [0, K]")

    def degrading_features(self) -> np.ndarray:
        rng = np.random.default_rng([self.seed, 0xDE6])
        return np.sort(rng.choice(self.K, size=self.n_degrading, replace=False))


@dataclass(frozen=True)
class SyntheticDisk:
    window: Window
    onset: int | None


def _generate_disk(cfg: GenConfig, index: int, degrading: np.ndarray) -> SyntheticDisk:
    rng = np.random.default_rng([cfg.seed, 1, index])
    K, L, phi = cfg.K, cfg.L, cfg.ar_coefficient
    k = np.arange(K)
    scale = 1.0 + (k % 3)
    mu = 10.0 * (k + 1) + scale * rng.uniform(-2.0, 2.0, K)
    sigma = scale * rng.uniform(0.8, 1.2, K)
    failing = bool(rng.random() < cfg.failure_rate)
    onset = int(rng.integers(L // 4, 3 * L // 4 + 1))

    rho = cfg.common_factor
    z = np.sqrt(rho) * rng.standard_normal(L)[None, :] + np.sqrt(1.0 - rho) * rng.standard_normal((K, L))
    noise_mult = np.ones((K, L))
    if failing:
        noise_mult[np.ix_(degrading, np.arange(onset + 1, L))] = 2.0
    innov = cfg.noise_scale * sigma[:, None] * z * noise_mult

    d = np.empty((K, L))
    d[:, 0] = innov[:, 0] / np.sqrt(1.0 - phi * phi)
    for l in range(1, L):
        d[:, l] = phi * d[:, l - 1] + innov[:, l]
    x = mu[:, None] + d
    if failing:
        ramp = np.maximum(0, np.arange(L) - onset)
        x[degrading] += cfg.drift_rate * sigma[degrading, None] * ramp[None, :]

    w = Window(
        disk_id=f"disk-{index:05d}",
        values=x,
        obs_mask=np.ones((K, L), dtype=np.int8),
        label=int(failing),
        start_time=int(rng.integers(0, 24 * 180)),
    )
    return SyntheticDisk(w, onset if failing else None)


def generate_disks(cfg: GenConfig) -> list[SyntheticDisk]:
    degrading = cfg.degrading_features()
    return [_generate_disk(cfg, i, degrading) for i in range(cfg.n_disks)]


def generate(cfg: GenConfig) -> list[Window]:
    """Fully observed labelled windows; deterministic given ``cfg.seed``."""
    return [d.window for d in generate_disks(cfg)]


def inject_missing(dataset: Sequence[Window], ratio: float, pattern: str, rng: np.random.Generator) -> list[Window]:
    """Hide observed entries; the input windows are left untouched and serve as ground truth.

    ``mcar`` hides each observed entry independently with probability ``ratio``.
    ``burst`` hides runs of geometric length (mean 6) at uniform starts in each
    row until the row's missing fraction reaches ``ratio``.
    """
    if not 0 <= ratio < 1:
        raise ValueError(f"missing ratio must lie in [0, 1), got {ratio}")
    if pattern not in ("mcar", "burst"):
        raise ValueError(f"unknown missingness pattern {pattern!r}")
    if ratio == 0:
        return list(dataset)
    out = []
    for w in dataset:
        mask = w.obs_mask.copy()
        if pattern == "mcar":
            mask[rng.random(mask.shape) < ratio] = 0
        else:
            L = mask.shape[1]
            for row in mask:
                while (row == 0).mean() < ratio:
                    start = int(rng.integers(0, L))
                    length = int(rng.geometric(1.0 / 6.0))
                    row[start:start + length] = 0
        values = np.where(mask == 1, w.values, np.nan)
        out.append(w.replace(values=values, obs_mask=mask))
    return out


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def fit_norm(windows: Sequence[Window]) -> NormStats:
    """Per-feature mean and population std over observed entries, std floored at 1e-6."""
    if not windows:
        raise DataError("cannot fit normalization on an empty training set")
    values = np.stack([w.values for w in windows])
    mask = np.stack([w.obs_mask for w in windows]) == 1
    K = values.shape[1]
    mean, std = np.zeros(K), np.full(K, STD_FLOOR)
    for k in range(K):
        obs = values[:, k][mask[:, k]]
        if obs.size == 0:
            log.warning("feature %d has no observed training entries; using mean 0, std floor", k)
            continue
        mean[k] = obs.mean()
        std[k] = max(obs.std(), STD_FLOOR)
    return NormStats(mean, std)


def apply_norm(w: Window, stats: NormStats) -> Window:
    z = (w.values - stats.mean[:, None]) / stats.std[:, None]
    return w.replace(values=np.where(w.obs_mask == 1, z, np.nan))


def normalize_matrix(matrix: np.ndarray, stats: NormStats) -> np.ndarray:
    return (np.asarray(matrix, dtype=np.float64) - stats.mean[:, None]) / stats.std[:, None]


def invert_norm(matrix: np.ndarray, stats: NormStats) -> np.ndarray:
    return np.asarray(matrix, dtype=np.float64) * stats.std[:, None] + stats.mean[:, None]


def window_to_record(w: Window) -> dict:
    K, L = w.shape
    flat = w.values.ravel()
    mask = w.obs_mask.ravel()
    return {
        "disk_id": w.disk_id,
        "label": int(w.label),
        "start_time": int(w.start_time),
        "K": K,
        "L": L,
        "values": [float(v) if m else None for v, m in zip(flat, mask)],
    }


def record_to_window(rec: dict) -> Window:
    try:
        K, L = int(rec["K"]), int(rec["L"])
        raw = rec["values"]
        disk_id = str(rec["disk_id"])
        label, start = int(rec["label"]), int(rec["start_time"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"missing or malformed field: {exc}") from None
    if not isinstance(raw, list) or len(raw) != K * L:
        raise DataError(f"values has {len(raw) if isinstance(raw, list) else 'no'} entries, expected K*L = {K * L}")
    if label not in (0, 1):
        raise DataError(f"label must be 0 or 1, got {label}")
    mask = np.array([v is not None for v in raw], dtype=np.int8).reshape(K, L)
    try:
        values = np.array([np.nan if v is None else float(v) for v in raw], dtype=np.float64).reshape(K, L)
    except (TypeError, ValueError) as exc:
        raise DataError(f"non-numeric value: {exc}") from None
    if not np.all(np.isfinite(values[mask == 1])):
        raise DataError("non-finite observed value")
    return Window(disk_id, values, mask, label, start)


def write_ndjson(dataset: Iterable[Window], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for w in dataset:
            fh.write(json.dumps(window_to_record(w), allow_nan=False))
            fh.write("\n")


def read_ndjson(path: str | Path) -> list[Window]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict):
                    raise DataError("record is not a JSON object")
                out.append(record_to_window(rec))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return out
