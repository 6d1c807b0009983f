"""From-scratch random-forest regressor: bagged CART trees with
variance-reduction splits, mean aggregation and MDI importances.

Reproducibility contract (pinned so independent implementations can match
bit-for-bit): tree ``t`` consumes a private splitmix64 stream seeded with
``random_state XOR t``; the bootstrap draws ``n`` row indices first (each
``next_u64() % n``, in sample order), then per-node feature subsets (only
when ``max_features`` restricts below d) in depth-first preorder. Results
are independent of ``n_jobs``.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import _tree
from ._binio import Reader, pack_str
from .errors import (BadMagic, DimensionMismatch, EmptyMatrix, IoFailure,
                     NonFiniteInput, VersionUnsupported)
from .rng import MASK64

MODEL_MAGIC = b"DMVF1"
MODEL_VERSION = 1

MaxFeatures = Union[str, int]  # "all" | "sqrt" | explicit count


@dataclass(frozen=True)
class ForestConfig:
    n_estimators: int = 100
    max_depth: Optional[int] = None
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    max_features: MaxFeatures = "all"
    bootstrap: bool = True
    random_state: int = 42
    n_jobs: int = -1  # -1 = all cores

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if isinstance(self.max_features, str):
            if self.max_features not in ("all", "sqrt"):
                raise ValueError("max_features must be 'all', 'sqrt' or a count")
        elif self.max_features < 1:
            raise ValueError("max_features count must be >= 1")

    def resolve_max_features(self, d: int) -> int:
        if self.max_features == "all":
            return d
        if self.max_features == "sqrt":
            return max(1, int(math.sqrt(d)))
        return min(int(self.max_features), d)


@dataclass(frozen=True)
class Leaf:
    value: float
    n: int


@dataclass(frozen=True)
class Split:
    feature_index: int
    threshold: float
    left: "TreeNode"
    right: "TreeNode"
    impurity_decrease: float
    n: int


TreeNode = Union[Leaf, Split]


@dataclass
class _FlatTrees:
    """All trees concatenated; children indices are tree-local, preorder."""

    feat: np.ndarray     # int32, -1 for leaves
    thr: np.ndarray      # float64
    left: np.ndarray     # int32
    right: np.ndarray    # int32
    value: np.ndarray    # float64
    n: np.ndarray        # int64
    gain: np.ndarray     # float64
    offsets: np.ndarray  # int64, length n_trees + 1


@dataclass
class ForestModel:
    config: ForestConfig
    feature_names: list[str]
    importances: np.ndarray
    _trees: _FlatTrees = field(repr=False)

    @property
    def n_trees(self) -> int:
        return len(self._trees.offsets) - 1

    def tree_root(self, t: int) -> TreeNode:
        """Materialize tree ``t`` as linked nodes (for inspection/tests)."""
        fl = self._trees
        off = int(fl.offsets[t])

        def build(i: int) -> TreeNode:
            g = off + i
            if fl.feat[g] < 0:
                return Leaf(value=float(fl.value[g]), n=int(fl.n[g]))
            return Split(
                feature_index=int(fl.feat[g]),
                threshold=float(fl.thr[g]),
                left=build(int(fl.left[g])),
                right=build(int(fl.right[g])),
                impurity_decrease=float(fl.gain[g]),
                n=int(fl.n[g]),
            )

        return build(0)


def tree_stream_seed(random_state: int, tree_index: int) -> int:
    """Seed of tree ``tree_index``'s private splitmix64 stream."""
    return (random_state ^ tree_index) & MASK64


def _resolve_jobs(n_jobs: int) -> int:
    import os
    if n_jobs is None or n_jobs <= 0:
        return max(1, os.cpu_count() or 1)
    return n_jobs


def _grow_one(X: np.ndarray, y: np.ndarray, cfg: ForestConfig, t: int,
              m_feat: int):
    n = X.shape[0]
    cap = 2 * n + 1
    feat = np.empty(cap, np.int32)
    thr = np.empty(cap, np.float64)
    left = np.empty(cap, np.int32)
    right = np.empty(cap, np.int32)
    value = np.empty(cap, np.float64)
    nn = np.empty(cap, np.int64)
    gain = np.empty(cap, np.float64)
    depth = -1 if cfg.max_depth is None else cfg.max_depth
    count = _tree.grow_tree(
        X, y, cfg.bootstrap, depth, cfg.min_samples_split,
        cfg.min_samples_leaf, m_feat,
        np.uint64(tree_stream_seed(cfg.random_state, t)),
        feat, thr, left, right, value, nn, gain,
    )
    return (feat[:count].copy(), thr[:count].copy(), left[:count].copy(),
            right[:count].copy(), value[:count].copy(), nn[:count].copy(),
            gain[:count].copy())


def fit(X, config: ForestConfig = ForestConfig()) -> ForestModel:
    """Train a forest on a feature matrix (anything with .values/.target/
    .column_names, e.g. preprocess.FeatureMatrix) or an (X, y) pair."""
    if isinstance(X, tuple):
        values, target = X
        names = [f"x{i}" for i in range(np.asarray(values).shape[1])]
    else:
        values, target, names = X.values, X.target, list(X.column_names)
    return fit_arrays(values, target, names, config)


def fit_arrays(values, target, feature_names: list[str],
               config: ForestConfig = ForestConfig()) -> ForestModel:
    Xa = np.ascontiguousarray(values, dtype=np.float64)
    ya = np.ascontiguousarray(target, dtype=np.float64)
    if Xa.ndim != 2 or ya.ndim != 1 or Xa.shape[0] != ya.shape[0]:
        raise DimensionMismatch(
            f"X has shape {Xa.shape}, y has shape {ya.shape}")
    n, d = Xa.shape
    if n == 0 or d == 0:
        raise EmptyMatrix(f"cannot fit on a {n}x{d} matrix")
    if len(feature_names) != d:
        raise DimensionMismatch("feature_names length does not match matrix")
    if not (np.isfinite(Xa).all() and np.isfinite(ya).all()):
        raise NonFiniteInput("training data contains NaN or infinity")

    m_feat = config.resolve_max_features(d)
    n_trees = config.n_estimators
    results: list = [None] * n_trees

    # tree 0 built inline (also warms the JIT before any worker threads)
    results[0] = _grow_one(Xa, ya, config, 0, m_feat)
    workers = min(_resolve_jobs(config.n_jobs), max(1, n_trees - 1))
    if workers > 1 and n_trees > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futs = {pool.submit(_grow_one, Xa, ya, config, t, m_feat): t
                    for t in range(1, n_trees)}
            for fut, t in futs.items():
                results[t] = fut.result()
    else:
        for t in range(1, n_trees):
            results[t] = _grow_one(Xa, ya, config, t, m_feat)

    offsets = np.zeros(n_trees + 1, np.int64)
    for t, r in enumerate(results):
        offsets[t + 1] = offsets[t] + len(r[0])
    flat = _FlatTrees(
        feat=np.concatenate([r[0] for r in results]),
        thr=np.concatenate([r[1] for r in results]),
        left=np.concatenate([r[2] for r in results]),
        right=np.concatenate([r[3] for r in results]),
        value=np.concatenate([r[4] for r in results]),
        n=np.concatenate([r[5] for r in results]),
        gain=np.concatenate([r[6] for r in results]),
        offsets=offsets,
    )

    imp = np.zeros(d, np.float64)
    split_mask = flat.feat >= 0
    if split_mask.any():
        np.add.at(imp, flat.feat[split_mask], flat.gain[split_mask])
        total = imp.sum()
        if total > 0:
            imp = imp / total
    return ForestModel(config=config, feature_names=list(feature_names),
                       importances=imp, _trees=flat)


def predict_many(model: ForestModel, X) -> np.ndarray:
    """Mean over per-tree leaf values for each row of X."""
    Xa = np.ascontiguousarray(X, dtype=np.float64)
    if Xa.ndim != 2 or Xa.shape[1] != len(model.feature_names):
        raise DimensionMismatch(
            f"expected {len(model.feature_names)} features, got shape {Xa.shape}")
    fl = model._trees
    out = np.empty((model.n_trees, Xa.shape[0]), np.float64)
    _tree.predict_trees(fl.feat, fl.thr, fl.left, fl.right, fl.value,
                        fl.offsets, Xa, out)
    return np.mean(out, axis=0)


def predict(model: ForestModel, x) -> float:
    """Prediction for a single feature row."""
    xa = np.asarray(x, dtype=np.float64)
    if xa.ndim != 1 or xa.shape[0] != len(model.feature_names):
        raise DimensionMismatch(
            f"expected {len(model.feature_names)} features, got {xa.shape}")
    return float(predict_many(model, xa.reshape(1, -1))[0])


def feature_importances(model: ForestModel) -> dict[str, float]:
    """MDI importances keyed by feature name (sum to 1, or all zero)."""
    return {name: float(v)
            for name, v in zip(model.feature_names, model.importances)}


# --- serialization (magic DMVF1) -------------------------------------------

def save_model(model: ForestModel, path) -> None:
    cfg = model.config
    if cfg.max_features == "all":
        mf_kind, mf_k = 0, 0
    elif cfg.max_features == "sqrt":
        mf_kind, mf_k = 1, 0
    else:
        mf_kind, mf_k = 2, int(cfg.max_features)
    parts = [MODEL_MAGIC, struct.pack("<I", MODEL_VERSION)]
    parts.append(struct.pack(
        "<IqIIBIBQ",
        cfg.n_estimators,
        -1 if cfg.max_depth is None else cfg.max_depth,
        cfg.min_samples_split, cfg.min_samples_leaf,
        mf_kind, mf_k, 1 if cfg.bootstrap else 0,
        cfg.random_state & MASK64,
    ))
    parts.append(struct.pack("<I", len(model.feature_names)))
    for name in model.feature_names:
        parts.append(pack_str(name))
    parts.append(struct.pack(f"<{len(model.importances)}d",
                             *model.importances.tolist()))
    fl = model._trees
    parts.append(struct.pack("<I", model.n_trees))
    for t in range(model.n_trees):
        lo, hi = int(fl.offsets[t]), int(fl.offsets[t + 1])
        parts.append(struct.pack("<I", hi - lo))
        for g in range(lo, hi):
            if fl.feat[g] < 0:
                parts.append(struct.pack("<BdQ", 0, fl.value[g], fl.n[g]))
            else:
                parts.append(struct.pack(
                    "<BIdIIdQ", 1, fl.feat[g], fl.thr[g],
                    fl.left[g], fl.right[g], fl.gain[g], fl.n[g]))
    try:
        with open(path, "wb") as fh:
            fh.write(b"".join(parts))
    except OSError as exc:
        raise IoFailure(f"cannot write model to {path}: {exc}") from exc


def load_model(path) -> ForestModel:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read model from {path}: {exc}") from exc
    rd = Reader(data, what="model file")
    if rd.take(len(MODEL_MAGIC)) != MODEL_MAGIC:
        raise BadMagic(f"{path} is not a model file")
    (version,) = rd.unpack("<I")
    if version != MODEL_VERSION:
        raise VersionUnsupported(version)
    (n_est, max_depth, min_split, min_leaf, mf_kind, mf_k, bootstrap,
     random_state) = rd.unpack("<IqIIBIBQ")
    max_features: MaxFeatures = {0: "all", 1: "sqrt"}.get(mf_kind, mf_k)
    cfg = ForestConfig(
        n_estimators=n_est,
        max_depth=None if max_depth < 0 else max_depth,
        min_samples_split=min_split, min_samples_leaf=min_leaf,
        max_features=max_features, bootstrap=bool(bootstrap),
        random_state=random_state,
    )
    (n_feat,) = rd.unpack("<I")
    names = [rd.read_str() for _ in range(n_feat)]
    imp = np.array(rd.unpack(f"<{n_feat}d"), np.float64)
    (n_trees,) = rd.unpack("<I")
    if n_trees != n_est:
        raise BadMagic("tree count does not match configuration")
    feats, thrs, lefts, rights, values, ns, gains = [], [], [], [], [], [], []
    offsets = np.zeros(n_trees + 1, np.int64)
    for t in range(n_trees):
        (n_nodes,) = rd.unpack("<I")
        offsets[t + 1] = offsets[t] + n_nodes
        for _ in range(n_nodes):
            (is_split,) = rd.unpack("<B")
            if is_split == 0:
                value, nn = rd.unpack("<dQ")
                feats.append(-1)
                thrs.append(0.0)
                lefts.append(-1)
                rights.append(-1)
                values.append(value)
                ns.append(nn)
                gains.append(0.0)
            else:
                fidx, thr, left, right, gain, nn = rd.unpack("<IdIIdQ")
                feats.append(fidx)
                thrs.append(thr)
                lefts.append(left)
                rights.append(right)
                values.append(0.0)
                ns.append(nn)
                gains.append(gain)
    rd.expect_end()
    flat = _FlatTrees(
        feat=np.array(feats, np.int32), thr=np.array(thrs, np.float64),
        left=np.array(lefts, np.int32), right=np.array(rights, np.int32),
        value=np.array(values, np.float64), n=np.array(ns, np.int64),
        gain=np.array(gains, np.float64), offsets=offsets,
    )
    return ForestModel(config=cfg, feature_names=names, importances=imp,
                       _trees=flat)
