"""Feature-group ablation: paired with/without runs and percent deltas.

The with and without arms of every cell share the fold assignment and the
per-tree random streams (same seed, same forest random_state), so the only
difference between them is the ablated columns. Percent change is relative
to the WITH value: 100 * (without - with) / with; higher error without the
group therefore reads as a positive change.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import evaluation, forest as forest_mod
from .errors import DivisionByZero
from .evaluation import CvResult, Metrics
from .ingest import RawTable
from .preprocess import ImputationPolicy, PipelinePlan, prepare_columns

METRIC_NAMES = ("mse", "mae", "r2", "evs")


def percent_change(with_value: float, without_value: float) -> float:
    """100 * (without - with) / with. Reports round to two decimals; the
    raw value is what this returns."""
    if with_value == 0.0:
        raise DivisionByZero("percent change undefined for a zero baseline")
    return 100.0 * (without_value - with_value) / with_value


def change_row(with_m: Metrics, without_m: Metrics) -> dict[str, Optional[float]]:
    """Raw percent change per metric; None where the baseline is zero."""
    out: dict[str, Optional[float]] = {}
    for name in METRIC_NAMES:
        w = getattr(with_m, name)
        wo = getattr(without_m, name)
        try:
            out[name] = percent_change(w, wo)
        except DivisionByZero:
            out[name] = None
    return out


@dataclass(frozen=True)
class MethodSpec:
    """A pipeline variant: its name and optional per-row embeddings."""

    name: str
    embeddings: Optional[np.ndarray] = None
    provider_id: str = ""
    model_id: str = ""


@dataclass(frozen=True)
class AblationSpec:
    methods: tuple[MethodSpec, ...]
    groups: dict[str, frozenset[str]] = field(
        default_factory=lambda: {"geolocation": frozenset({"geolocation"})})
    holdout_fraction: float = 0.2
    cv_k: int = 5
    policy: ImputationPolicy = ImputationPolicy()
    selection_k: int = 10
    mi_bins: int = 10


@dataclass(frozen=True)
class PairedMetrics:
    metrics_with: Metrics
    metrics_without: Metrics
    change_pct: dict[str, Optional[float]]


@dataclass(frozen=True)
class AblationCell:
    holdout: PairedMetrics
    cv: PairedMetrics
    cv_k: int


@dataclass(frozen=True)
class AblationResult:
    cells: dict[tuple[str, str], AblationCell]  # (method, group) -> cell


@dataclass(frozen=True)
class ArmMetrics:
    """One arm of a paired cell: hold-out metrics plus a CV result."""

    holdout: Metrics
    cv: CvResult


class _MemoizedPlan:
    """Caches plan.materialize per fold so the with and without arms pay
    for preprocessing once."""

    def __init__(self, plan: PipelinePlan):
        self.plan = plan
        self._cache: dict[tuple[bytes, bytes], tuple] = {}

    @property
    def n_rows(self) -> int:
        return self.plan.n_rows

    def materialize(self, train_idx, test_idx):
        key = (np.asarray(train_idx).tobytes(), np.asarray(test_idx).tobytes())
        if key not in self._cache:
            self._cache[key] = self.plan.materialize(train_idx, test_idx)
        return self._cache[key]


@dataclass
class _AblatedData:
    """Fold protocol wrapper removing a feature group after the paired plan
    materializes (preprocessing states identical to the with arm)."""

    inner: _MemoizedPlan
    tags: frozenset[str]

    @property
    def n_rows(self) -> int:
        return self.inner.n_rows

    def materialize(self, train_idx, test_idx):
        train_m, test_m = self.inner.materialize(train_idx, test_idx)
        return train_m.without_groups(self.tags), test_m.without_groups(self.tags)


def _fit_and_score(train_m, test_m, config) -> Metrics:
    model = forest_mod.fit(train_m, config)
    preds = forest_mod.predict_many(model, test_m.values)
    return evaluation.compute_metrics(test_m.target, preds)


def _pair(with_arm: ArmMetrics, without_arm: ArmMetrics, k: int) -> AblationCell:
    return AblationCell(
        holdout=PairedMetrics(with_arm.holdout, without_arm.holdout,
                              change_row(with_arm.holdout, without_arm.holdout)),
        cv=PairedMetrics(with_arm.cv.mean, without_arm.cv.mean,
                         change_row(with_arm.cv.mean, without_arm.cv.mean)),
        cv_k=k)


def run_ablation(table: RawTable, spec: AblationSpec,
                 config: forest_mod.ForestConfig, seed: int,
                 reuse_with: Optional[dict[str, ArmMetrics]] = None) -> AblationResult:
    """Train and evaluate every (method, group) cell twice — with the group
    and with it removed — on the same folds and tree streams.

    ``reuse_with`` can inject precomputed with-arm metrics per method (they
    are identical by the paired-seed design when produced with the same
    plan, seed and fold count); missing methods are computed here.
    """
    columns = prepare_columns(table)
    train_idx, test_idx = evaluation.holdout_split(
        columns.n_rows, spec.holdout_fraction, seed)

    cells: dict[tuple[str, str], AblationCell] = {}
    for method in spec.methods:
        plan = _MemoizedPlan(PipelinePlan(
            columns=columns, policy=spec.policy, selection_k=spec.selection_k,
            mi_bins=spec.mi_bins, include_geo=True,
            embeddings=method.embeddings, provider_id=method.provider_id,
            model_id=method.model_id, selection_seed=config.random_state,
            n_jobs=config.n_jobs))
        train_m, test_m = plan.materialize(train_idx, test_idx)
        if reuse_with and method.name in reuse_with:
            with_arm = reuse_with[method.name]
        else:
            with_arm = ArmMetrics(
                holdout=_fit_and_score(train_m, test_m, config),
                cv=evaluation.cross_validate(plan, config, spec.cv_k, seed))
        for group_name, tags in spec.groups.items():
            width = sum(1 for c in train_m.column_names
                        if train_m.group_tags[c] in tags)
            if width == 0:
                # removing nothing: both arms are identical by construction
                without_arm = with_arm
            else:
                ablated = _AblatedData(plan, tags)
                without_arm = ArmMetrics(
                    holdout=_fit_and_score(*ablated.materialize(train_idx, test_idx),
                                           config),
                    cv=evaluation.cross_validate(ablated, config, spec.cv_k, seed))
            cells[(method.name, group_name)] = _pair(with_arm, without_arm,
                                                     spec.cv_k)
    return AblationResult(cells=cells)
