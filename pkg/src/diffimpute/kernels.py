"""Kernel backend selection.

The compiled ``_ckernels`` extension supplies the kernels that NumPy can
only express with Python-level loops or several temporaries: the per-row
gap filling used by the baselines and the fused Adam update. Elementwise
activations and the sort-based quantiles stay on NumPy in every backend,
since NumPy already runs them as vectorized C.

The extension is used when it imports; set ``DIFFIMPUTE_PURE_PYTHON=1``
to force the NumPy fallback.
"""
from __future__ import annotations

import os

from . import _pykernels

COMPILED_KERNELS = ("ffill_rows", "linear_rows", "adam_step")

if os.environ.get("DIFFIMPUTE_PURE_PYTHON"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

silu = _pykernels.silu
silu_grad = _pykernels.silu_grad
quantiles = _pykernels.quantiles
pinball_crps = _pykernels.pinball_crps
ffill_rows = _impl.ffill_rows
linear_rows = _impl.linear_rows
adam_step = _impl.adam_step
