"""Rule-based imputers. Each returns a K x L matrix with observed entries untouched."""
from __future__ import annotations

import numpy as np

from . import kernels
from .core import Window


def zero_impute(w: Window) -> np.ndarray:
    return np.where(w.obs_mask == 1, w.values, 0.0)


def forward_impute(w: Window) -> np.ndarray:
    """Carry the last observed value forward along each feature row.

    Leading gaps take the row's first observed value; rows with no
    observation become zeros.
    """
    out = kernels.ffill_rows(w.values, w.obs_mask)
    return np.where(w.obs_mask == 1, w.values, out)


def linear_impute(w: Window) -> np.ndarray:
    """Linear interpolation between observed neighbours, holding the edge values flat."""
    out = kernels.linear_rows(w.values, w.obs_mask)
    return np.where(w.obs_mask == 1, w.values, out)


BASELINES = {
    "zero": zero_impute,
    "forward": forward_impute,
    "linear": linear_impute,
}
