"""Imputation metrics (MAE, CRPS) and binary classification metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

CRPS_LEVELS = np.round(np.arange(1, 20) * 0.05, 2)


def _targets(target_mask) -> np.ndarray:
    sel = np.asarray(target_mask) != 0
    if not sel.any():
        raise ValueError("target mask selects no entries")
    return sel


def mae(pred, truth, target_mask) -> float:
    sel = _targets(target_mask)
    return float(np.mean(np.abs(np.asarray(pred, dtype=np.float64)[sel] - np.asarray(truth, dtype=np.float64)[sel])))


def crps(samples, truth, target_mask) -> float:
    """Quantile-grid CRPS averaged over the target entries.

    ``samples`` has the replicate axis first, followed by the shape of ``truth``.
    Each entry scores the mean over 19 levels q = 0.05..0.95 of
    2 * pinball_q(truth - quantile_q).
    """
    sel = _targets(target_mask)
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape[1:] != np.shape(truth):
        raise ValueError(f"samples {samples.shape} do not match truth {np.shape(truth)}")
    per_entry = kernels.pinball_crps(samples[:, sel], np.asarray(truth, dtype=np.float64)[sel], CRPS_LEVELS)
    return float(per_entry.mean())


def crps_energy(samples, truth, target_mask) -> float:
    """Sample-based CRPS, E|X - y| - E|X - X'| / 2, over all sample pairs."""
    sel = _targets(target_mask)
    x = np.asarray(samples, dtype=np.float64)[:, sel]
    y = np.asarray(truth, dtype=np.float64)[sel]
    term1 = np.abs(x - y).mean(axis=0)
    term2 = np.abs(x[:, None, :] - x[None, :, :]).mean(axis=(0, 1))
    return float((term1 - 0.5 * term2).mean())


@dataclass(frozen=True)
class PRF1:
    precision: float
    recall: float
    f1: float
    precision_undefined: bool = False
    recall_undefined: bool = False

    def __iter__(self):
        return iter((self.precision, self.recall, self.f1))

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "precision_undefined": self.precision_undefined,
            "recall_undefined": self.recall_undefined,
        }


def prf1(predicted, actual) -> PRF1:
    """Precision, recall and F1 for binary labels; undefined ratios are reported as 0 and flagged."""
    pred = np.asarray(predicted).astype(bool)
    true = np.asarray(actual).astype(bool)
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {true.shape}")
    tp = int(np.sum(pred & true))
    fp = int(np.sum(pred & ~true))
    fn = int(np.sum(~pred & true))
    p_undef, r_undef = tp + fp == 0, tp + fn == 0
    p = 0.0 if p_undef else tp / (tp + fp)
    r = 0.0 if r_undef else tp / (tp + fn)
    f1 = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return PRF1(p, r, f1, p_undef, r_undef)
