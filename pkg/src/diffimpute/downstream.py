"""Failure-prediction harness: featurize imputed windows and fit a logistic classifier."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import DataError, Window
from .metrics import PRF1, prf1

FEATURE_NAMES = ("mean", "std", "last", "slope")


def featurize(imputed: np.ndarray) -> np.ndarray:
    """Per feature row: mean, population std, last value, least-squares slope.

    Output order is row-major over (feature row, statistic), i.e.
    [mean_0, std_0, last_0, slope_0, mean_1, ...], length 4K.
    """
    x = np.asarray(imputed, dtype=np.float64)
    if x.ndim != 2 or not np.all(np.isfinite(x)):
        raise ValueError("featurize needs a finite K x L matrix")
    L = x.shape[1]
    mean = x.mean(axis=1)
    tc = np.arange(L, dtype=np.float64) - (L - 1) / 2.0
    denom = float(tc @ tc)
    slope = (x - mean[:, None]) @ tc / denom if denom > 0 else np.zeros(x.shape[0])
    return np.stack([mean, x.std(axis=1), x[:, -1], slope], axis=1).ravel()


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True)
class LogisticModel:
    weights: np.ndarray
    bias: float
    feature_mean: np.ndarray | None = None
    feature_std: np.ndarray | None = None

    def _scale(self, X):
        X = np.asarray(X, dtype=np.float64)
        if self.feature_mean is None:
            return X
        return (X - self.feature_mean) / self.feature_std

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(self._scale(X) @ self.weights + self.bias)

    def predict(self, X, threshold: float = 0.5) -> np.ndarray:
        # ties go to the negative class
        return (self.predict_proba(X) > threshold).astype(int)


def cross_entropy(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray) -> float:
    z = X @ w + b
    # log(1 + e^z) - y z, stable for large |z|
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def cross_entropy_grad(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray):
    r = _sigmoid(X @ w + b) - y
    return X.T @ r / len(y), float(r.mean())


def train_classifier(
    features, labels, lr: float = 0.5, epochs: int = 2000, seed: int = 0, standardize: bool = True
) -> LogisticModel:
    """Full-batch gradient descent on mean cross-entropy, starting from zero weights.

    ``seed`` is accepted for interface symmetry; zero initialization and
    full-batch steps make the fit deterministic without it.
    """
    del seed
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("features must be (n, d) with one label per row")
    if len(np.unique(y)) < 2:
        raise DataError("classifier needs examples of both classes")
    mean = std = None
    if standardize:
        mean = X.mean(axis=0)
        std = np.where(X.std(axis=0) > 1e-12, X.std(axis=0), 1.0)
        X = (X - mean) / std
    w = np.zeros(X.shape[1])
    b = 0.0
    for _ in range(epochs):
        gw, gb = cross_entropy_grad(w, b, X, y)
        w -= lr * gw
        b -= lr * gb
    return LogisticModel(w, b, mean, std)


def split_by_disk(windows: Sequence[Window], test_fraction: float = 0.3, seed: int = 0):
    """Stratified split of disk ids into disjoint (train, test) sets."""
    rng = np.random.default_rng([seed, 0x5B17])
    ids = np.array([w.disk_id for w in windows])
    labels = np.array([w.label for w in windows])
    if len(set(ids)) != len(ids):
        raise DataError("disk ids must be unique")
    train, test = [], []
    for cls in (0, 1):
        members = np.sort(ids[labels == cls])
        members = members[rng.permutation(len(members))]
        n_test = int(round(test_fraction * len(members)))
        test.extend(members[:n_test])
        train.extend(members[n_test:])
    return sorted(train), sorted(test)


@dataclass(frozen=True)
class PipelineResult:
    scores: PRF1
    n_train: int
    n_test: int


def evaluate_pipeline(
    windows: Sequence[Window],
    imputer: Callable[[Window], np.ndarray] | dict[str, np.ndarray],
    split: tuple[Sequence[str], Sequence[str]],
    lr: float = 0.5,
    epochs: int = 2000,
    seed: int = 0,
    threshold: float = 0.5,
) -> PipelineResult:
    """Impute every window, then train on the train disks and score the test disks.

    ``imputer`` is either a callable on windows or a precomputed mapping
    disk_id -> imputed matrix. Only the imputed values reach the features.
    """
    train_ids, test_ids = (list(s) for s in split)
    if not train_ids or not test_ids:
        raise DataError("train and test splits must both be non-empty")
    if set(train_ids) & set(test_ids):
        raise DataError("a disk appears in both train and test")
    by_id = {w.disk_id: w for w in windows}
    if isinstance(imputer, dict):
        imputed = {i: imputer[i] for i in train_ids + test_ids}
    else:
        imputed = {i: imputer(by_id[i]) for i in train_ids + test_ids}
    X_train = np.stack([featurize(imputed[i]) for i in train_ids])
    X_test = np.stack([featurize(imputed[i]) for i in test_ids])
    y_train = np.array([by_id[i].label for i in train_ids])
    y_test = np.array([by_id[i].label for i in test_ids])
    model = train_classifier(X_train, y_train, lr, epochs, seed)
    scores = prf1(model.predict(X_test, threshold), y_test)
    return PipelineResult(scores, len(train_ids), len(test_ids))
