"""Regression metrics, k-fold cross-validation and residual export.

Variances are population variances (both in the explained-variance score
and in the fold-metric standard deviations). Fold assignment shuffles row
indices with a seeded splitmix64 Fisher-Yates, then deals contiguous
chunks; the first ``n mod k`` folds take the extra element.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import forest as forest_mod
from .errors import BadK, Empty, IoFailure, LengthMismatch, ZeroVariance
from .rng import permutation


@dataclass(frozen=True)
class Metrics:
    mse: float
    mae: float
    r2: float
    evs: float

    def as_dict(self) -> dict[str, float]:
        return {"mse": self.mse, "mae": self.mae, "r2": self.r2, "evs": self.evs}


def _check(y, y_hat):
    ya = np.asarray(y, dtype=np.float64)
    pa = np.asarray(y_hat, dtype=np.float64)
    if ya.shape != pa.shape or ya.ndim != 1:
        raise LengthMismatch(f"shapes {ya.shape} vs {pa.shape}")
    if ya.size == 0:
        raise Empty("metrics need at least one element")
    return ya, pa


def mse(y, y_hat) -> float:
    ya, pa = _check(y, y_hat)
    return float(np.mean((ya - pa) ** 2))


def mae(y, y_hat) -> float:
    ya, pa = _check(y, y_hat)
    return float(np.mean(np.abs(ya - pa)))


def r2(y, y_hat) -> float:
    ya, pa = _check(y, y_hat)
    ss_tot = float(np.sum((ya - ya.mean()) ** 2))
    if ss_tot == 0.0:
        raise ZeroVariance("r2 undefined for a constant target")
    return 1.0 - float(np.sum((ya - pa) ** 2)) / ss_tot


def evs(y, y_hat) -> float:
    ya, pa = _check(y, y_hat)
    var_y = float(np.var(ya))
    if var_y == 0.0:
        raise ZeroVariance("evs undefined for a constant target")
    return 1.0 - float(np.var(ya - pa)) / var_y


def compute_metrics(y, y_hat) -> Metrics:
    return Metrics(mse=mse(y, y_hat), mae=mae(y, y_hat), r2=r2(y, y_hat),
                   evs=evs(y, y_hat))


# --- folds ----------------------------------------------------------------------

@dataclass(frozen=True)
class FoldAssignment:
    k: int
    fold_of: np.ndarray  # length n, values in [0, k)

    @property
    def n(self) -> int:
        return self.fold_of.size

    def test_indices(self, fold: int) -> np.ndarray:
        return np.where(self.fold_of == fold)[0]

    def train_indices(self, fold: int) -> np.ndarray:
        return np.where(self.fold_of != fold)[0]


def kfold_indices(n: int, k: int, seed: int) -> FoldAssignment:
    """Disjoint covering folds with sizes differing by at most one."""
    if not 2 <= k <= n:
        raise BadK(f"k={k} must satisfy 2 <= k <= n={n}")
    perm = permutation(n, seed)
    fold_of = np.empty(n, dtype=np.int64)
    base, extra = divmod(n, k)
    start = 0
    for f in range(k):
        size = base + (1 if f < extra else 0)
        for i in range(start, start + size):
            fold_of[perm[i]] = f
        start += size
    return FoldAssignment(k=k, fold_of=fold_of)


def holdout_split(n: int, fraction: float, seed: int):
    """Seeded train/test split; test gets round(n*fraction) rows, at least 1
    and at most n-1. Both sides come back in ascending row order."""
    if n < 2:
        raise BadK(f"cannot split {n} row(s)")
    n_test = min(max(int(round(n * fraction)), 1), n - 1)
    perm = permutation(n, seed)
    test = np.sort(np.asarray(perm[:n_test], dtype=np.int64))
    train = np.sort(np.asarray(perm[n_test:], dtype=np.int64))
    return train, test


# --- cross-validation --------------------------------------------------------------

@dataclass(frozen=True)
class CvResult:
    per_fold: tuple[Metrics, ...]
    mean: Metrics
    std: Metrics

    @property
    def k(self) -> int:
        return len(self.per_fold)


def _aggregate(per_fold: list[Metrics]) -> tuple[Metrics, Metrics]:
    arr = np.array([[m.mse, m.mae, m.r2, m.evs] for m in per_fold])
    mean = arr.mean(axis=0)
    std = arr.std(axis=0)  # population std across folds
    return (Metrics(*[float(v) for v in mean]),
            Metrics(*[float(v) for v in std]))


def cross_validate(data, config: forest_mod.ForestConfig, k: int,
                   seed: int) -> CvResult:
    """k-fold CV over a fold-materializable dataset.

    ``data`` needs ``n_rows`` and ``materialize(train_idx, test_idx) ->
    (train_matrix, test_matrix)``: a bare FeatureMatrix slices rows (states
    prefit), while preprocess.PipelinePlan refits imputation, encoding,
    scaling and selection on each fold's training rows.
    """
    folds = kfold_indices(data.n_rows, k, seed)
    per_fold: list[Metrics] = []
    for f in range(k):
        train_m, test_m = data.materialize(folds.train_indices(f),
                                           folds.test_indices(f))
        model = forest_mod.fit(train_m, config)
        preds = forest_mod.predict_many(model, test_m.values)
        per_fold.append(compute_metrics(test_m.target, preds))
    mean, std = _aggregate(per_fold)
    return CvResult(per_fold=tuple(per_fold), mean=mean, std=std)


# --- residuals ----------------------------------------------------------------------

@dataclass(frozen=True)
class ResidualRecord:
    index: int
    y: float
    y_hat: float
    residual: float


def residuals(y, y_hat, index=None) -> list[ResidualRecord]:
    ya, pa = _check(y, y_hat)
    if index is None:
        index = range(ya.size)
    return [ResidualRecord(index=int(i), y=float(a), y_hat=float(b),
                           residual=float(a - b))
            for i, a, b in zip(index, ya, pa)]


def export_residuals(records, path) -> None:
    """CSV with header index,y,y_hat,residual."""
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["index", "y", "y_hat", "residual"])
            for rec in records:
                writer.writerow([rec.index, repr(rec.y), repr(rec.y_hat),
                                 repr(rec.residual)])
    except OSError as exc:
        raise IoFailure(f"cannot write residuals to {path}: {exc}") from exc
