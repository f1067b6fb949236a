"""Domain types and configuration shared across the package.

Windows hold one disk's K x L matrix. Missing positions carry ``MISSING``
(NaN) in ``values`` and 0 in ``obs_mask``; the mask is authoritative.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Mapping

import numpy as np

MISSING = float("nan")


class ConfigError(ValueError):
    """Invalid configuration value or file."""


class DataError(ValueError):
    """Malformed dataset, window or checkpoint."""


class NumericError(RuntimeError):
    """Non-finite loss, gradient or output."""


@dataclass(frozen=True, eq=False)
class Window:
    disk_id: str
    values: np.ndarray
    obs_mask: np.ndarray
    label: int = 0
    start_time: int = 0

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        mask = np.array(self.obs_mask, dtype=np.int8)
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "obs_mask", mask)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def n_observed(self) -> int:
        return int(self.obs_mask.sum())

    def replace(self, **changes) -> "Window":
        return dataclasses.replace(self, **changes)

    def __eq__(self, other):
        if not isinstance(other, Window):
            return NotImplemented
        return (
            self.disk_id == other.disk_id
            and self.label == other.label
            and self.start_time == other.start_time
            and self.values.shape == other.values.shape
            and np.array_equal(self.obs_mask, other.obs_mask)
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class MaskPair:
    cond_mask: np.ndarray
    target_mask: np.ndarray

    def __post_init__(self):
        cond = np.array(self.cond_mask, dtype=np.int8)
        target = np.array(self.target_mask, dtype=np.int8)
        if cond.shape != target.shape:
            raise ValueError(f"mask shapes differ: {cond.shape} vs {target.shape}")
        if np.any(cond & target):
            raise ValueError("cond_mask and target_mask overlap")
        cond.setflags(write=False)
        target.setflags(write=False)
        object.__setattr__(self, "cond_mask", cond)
        object.__setattr__(self, "target_mask", target)

    @classmethod
    def for_inference(cls, w: Window) -> "MaskPair":
        """Condition on every observed entry and target every missing one.

        Used only for inference; it intentionally falls outside the evaluation
        invariant checked by ``check_against``.
        """
        return cls(w.obs_mask, 1 - w.obs_mask)

    def check_against(self, obs_mask: np.ndarray) -> None:
        """Evaluation masks must select only observed entries so that ground truth exists."""
        if self.cond_mask.shape != np.shape(obs_mask):
            raise ValueError(f"mask shape {self.cond_mask.shape} does not match window {np.shape(obs_mask)}")
        if np.any((self.cond_mask + self.target_mask) > obs_mask):
            raise ValueError("mask pair selects entries that are not observed")


def validate_window(w: Window) -> list[str]:
    """Return a list of violated invariants; an empty list means the window is valid."""
    problems = []
    values, mask = np.asarray(w.values), np.asarray(w.obs_mask)
    if values.ndim != 2 or min(values.shape, default=0) < 1:
        problems.append(f"values must be a non-empty K x L matrix, got shape {values.shape}")
    if mask.shape != values.shape:
        problems.append(f"shape mismatch: values {values.shape} vs obs_mask {mask.shape}")
        return problems
    if not np.all((mask == 0) | (mask == 1)):
        problems.append("obs_mask must be binary")
        return problems
    observed = mask == 1
    bad = observed & ~np.isfinite(values)
    if bad.any():
        k, l = np.argwhere(bad)[0]
        problems.append(f"non-finite observed entry at ({k}, {l}); {int(bad.sum())} in total")
    return problems


@dataclass(frozen=True)
class DiffusionConfig:
    T: int = 50
    beta_min: float = 1e-4
    beta_max: float = 0.5
    schedule_kind: str = "quadratic"
    hidden_width: int = 128
    residual_blocks: int = 2
    step_embed_dim: int = 64
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 30
    n_replicates: int = 100
    fast_steps: int = 10
    mask_ratio: float = 0.10
    seed: int = 0

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ConfigError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if not 0 < self.beta_min < self.beta_max < 1:
            out.append("need 0 < beta_min < beta_max < 1")
        if self.schedule_kind not in ("linear", "quadratic"):
            out.append(f"unknown schedule_kind {self.schedule_kind!r}")
        if self.T < 1:
            out.append("T must be >= 1")
        if not 1 <= self.fast_steps <= self.T:
            out.append("need 1 <= fast_steps <= T")
        if not 0 < self.mask_ratio < 1:
            out.append("need 0 < mask_ratio < 1")
        if self.n_replicates < 1:
            out.append("n_replicates must be >= 1")
        if self.step_embed_dim < 2 or self.step_embed_dim % 2:
            out.append("step_embed_dim must be a positive even integer")
        for name in ("hidden_width", "batch_size"):
            if getattr(self, name) < 1:
                out.append(f"{name} must be >= 1")
        if self.residual_blocks < 0 or self.epochs < 0:
            out.append("residual_blocks and epochs must be >= 0")
        if not self.learning_rate > 0:
            out.append("learning_rate must be positive")
        return out

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "DiffusionConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in data.items():
            kind = known[key].type
            try:
                if kind == "int":
                    if isinstance(value, float) and not value.is_integer():
                        raise ValueError(value)
                    kwargs[key] = int(value)
                elif kind == "float":
                    kwargs[key] = float(value)
                else:
                    kwargs[key] = str(value)
            except (TypeError, ValueError):
                raise ConfigError(f"bad value for {key}: {value!r}") from None
        return cls(**kwargs)

    def with_overrides(self, **overrides) -> "DiffusionConfig":
        merged = self.to_dict()
        merged.update({k: v for k, v in overrides.items() if v is not None})
        return DiffusionConfig.from_mapping(merged)


def load_config(path: str | Path) -> DiffusionConfig:
    """Read a flat JSON object of DiffusionConfig fields."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict) or any(isinstance(v, (dict, list)) for v in data.values()):
        raise ConfigError(f"config {path} must be a flat JSON object")
    return DiffusionConfig.from_mapping(data)


@dataclass(frozen=True)
class NoiseSchedule:
    """beta/alpha indexed by step 1..T (index 0 unused); alpha_bar[0] == 1."""

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return len(self.alpha_bar) - 1

    def check_step(self, t: int, lo: int = 1) -> None:
        if not lo <= t <= self.T:
            raise ValueError(f"step {t} outside [{lo}, {self.T}]")


def param_shapes(K: int, L: int, H: int, B: int, D: int) -> dict[str, tuple[int, ...]]:
    """Canonical tensor names and shapes, in checkpoint order."""
    KL = K * L
    shapes = {
        "in_w": (3 * KL, H),
        "in_b": (H,),
        "emb1_w": (D, H),
        "emb1_b": (H,),
        "emb2_w": (H, H),
        "emb2_b": (H,),
    }
    for i in range(B):
        shapes[f"block{i}_w1"] = (H, H)
        shapes[f"block{i}_b1"] = (H,)
        shapes[f"block{i}_w2"] = (H, H)
        shapes[f"block{i}_b2"] = (H,)
    shapes["out_w"] = (H, KL)
    shapes["out_b"] = (KL,)
    return shapes


@dataclass(eq=False)
class ModelParams:
    """Named float64 tensors of the conditional denoiser."""

    K: int
    L: int
    H: int
    B: int
    D: int
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        expected = param_shapes(self.K, self.L, self.H, self.B, self.D)
        if list(self.tensors) != list(expected):
            missing = set(expected) - set(self.tensors)
            extra = set(self.tensors) - set(expected)
            if missing or extra:
                raise DataError(f"parameter names mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
            self.tensors = {name: self.tensors[name] for name in expected}
        for name, shape in expected.items():
            arr = np.asarray(self.tensors[name], dtype=np.float64)
            if arr.shape != shape:
                raise DataError(f"{name}: expected shape {shape}, got {arr.shape}")
            self.tensors[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    @property
    def dims(self) -> dict[str, int]:
        return {"K": self.K, "L": self.L, "H": self.H, "B": self.B, "D": self.D}

    def like(self, tensors: Mapping[str, np.ndarray]) -> "ModelParams":
        return ModelParams(self.K, self.L, self.H, self.B, self.D, dict(tensors))

    def copy(self) -> "ModelParams":
        return self.like({k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.tensors.values())

    def n_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def equal(self, other: "ModelParams") -> bool:
        return self.dims == other.dims and all(
            np.array_equal(self[k], other[k]) for k in self.tensors
        )


def ensure_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {name}")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))
