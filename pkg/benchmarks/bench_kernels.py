"""Compare the compiled kernels with the NumPy fallback.

Prints per-kernel timings for both backends (the kernels that the
extension provides, plus the NumPy-only ones for reference), then times a short training
run end to end under each backend (in a subprocess, so backend selection
at import time is honoured).

    python3 benchmarks/bench_kernels.py [--repeat 20]
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from diffimpute import _pykernels

try:
    from diffimpute import _ckernels
except ImportError:  # extension not built
    _ckernels = None

TRAIN_SNIPPET = """
import time, numpy as np
from diffimpute import kernels, synthdata, trainer
from diffimpute.core import DiffusionConfig
data = synthdata.generate(synthdata.GenConfig(n_disks=128, K=8, L=24, seed=0))
stats = synthdata.fit_norm(data)
data = [synthdata.apply_norm(w, stats) for w in data]
cfg = DiffusionConfig(epochs=3, hidden_width=128)
t0 = time.perf_counter()
trainer.train(data, cfg)
print(kernels.BACKEND, time.perf_counter() - t0)
"""


def cases(rng):
    x = rng.normal(size=(32, 256))
    vals = rng.normal(size=(8, 72))
    mask = (rng.random((8, 72)) > 0.3).astype(np.int8)
    samples = rng.normal(size=(100, 8, 72))
    truth = rng.normal(size=(8, 72))
    qs = np.linspace(0.05, 0.95, 19)
    n = 120_000
    p, g = rng.normal(size=n), rng.normal(size=n)

    def adam(mod):
        m, v, q = np.zeros(n), np.zeros(n), p.copy()
        return lambda: mod.adam_step(q, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 1)

    return {
        "silu": lambda mod: (lambda: mod.silu(x)),
        "silu_grad": lambda mod: (lambda: mod.silu_grad(x)),
        "ffill_rows": lambda mod: (lambda: mod.ffill_rows(vals, mask)),
        "linear_rows": lambda mod: (lambda: mod.linear_rows(vals, mask)),
        "quantiles": lambda mod: (lambda: mod.quantiles(samples, qs)),
        "pinball_crps": lambda mod: (lambda: mod.pinball_crps(samples, truth, qs)),
        "adam_step": adam,
    }


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--skip-train", action="store_true")
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    backends = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    print(f"{'kernel':<14}" + "".join(f"{name + ' us':>14}" for name, _ in backends) + f"{'speedup':>10}")
    for name, make in cases(rng).items():
        times = []
        for _, mod in backends:
            fn = make(mod)
            times.append(1e6 * min(timeit.repeat(fn, number=1, repeat=args.repeat)))
        ratio = f"{times[0] / times[1]:.2f}x" if len(times) == 2 else "-"
        print(f"{name:<14}" + "".join(f"{t:>14.1f}" for t in times) + f"{ratio:>10}")
    if args.skip_train:
        return
    print("\nend-to-end training, 128 windows x 3 epochs:")
    for pure in ("1", ""):
        env = dict(os.environ)
        env.pop("DIFFIMPUTE_PURE_PYTHON", None)
        if pure:
            env["DIFFIMPUTE_PURE_PYTHON"] = pure
        out = subprocess.run([sys.executable, "-c", TRAIN_SNIPPET], env=env, capture_output=True, text=True, check=True)
        backend, seconds = out.stdout.split()
        print(f"  {backend:<8} {float(seconds):.2f} s")


if __name__ == "__main__":
    main()
