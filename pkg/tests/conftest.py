import numpy as np
import pytest

from diffimpute.core import DiffusionConfig, ModelParams, Window
from diffimpute.denoiser import init_params


# filled by tests/test_acceptance.py, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def random_params(K, L, H=3, B=1, D=4, seed=0, scale=0.5):
    """Small network with every tensor random (including the output layer)."""
    cfg = DiffusionConfig(hidden_width=H, residual_blocks=B, step_embed_dim=D, T=10, fast_steps=2)
    p = init_params(K, L, cfg, seed)
    rng = np.random.default_rng(seed + 1)
    return p.like({k: rng.normal(0.0, scale, v.shape) for k, v in p.items()})


def rel_err(a, b, floor=1e-4):
    """Elementwise |a - b| / max(|a|, |b|, floor)."""
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def make_window(values, mask=None, disk_id="d0", label=0):
    values = np.asarray(values, dtype=float)
    if mask is None:
        mask = np.isfinite(values).astype(np.int8)
    values = np.where(np.asarray(mask) == 1, values, np.nan)
    return Window(disk_id, values, mask, label, 0)


@pytest.fixture
def tiny_cfg():
    return DiffusionConfig(T=6, hidden_width=5, residual_blocks=1, step_embed_dim=4, fast_steps=3, n_replicates=8, epochs=2, batch_size=4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
