"""Feature engineering: imputation, selection, encoding, scaling, assembly.

All fitted state (fill values, vocabularies, scaler bounds, the selected
feature set) is computed from training rows only and applied unchanged to
held-out rows; :class:`PipelinePlan` packages that discipline for the
cross-validation and ablation harnesses, refitting per training fold.

The assembled matrix has a pinned column order: one-hot blocks by source
column name ascending, then scaled numeric columns by name ascending, then
latitude/longitude (when geolocation is included), then embedding
dimensions e0..e(D-1).
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Mapping, Optional, Sequence

import numpy as np

from . import forest
from ._binio import Reader, pack_str
from .errors import (AllMissing, BadMagic, InvalidTarget, IoFailure,
                     RowCountMismatch, VersionUnsupported, ZeroVariance)
from .ingest import RawTable, Role, parse_geolocation

PREP_MAGIC = b"DMVP1"
PREP_VERSION = 1


class UnseenCategoryWarning(UserWarning):
    """A category absent from the training vocabulary appeared at apply time."""


@dataclass(frozen=True)
class ImputationPolicy:
    numeric: str = "mean"               # mean | median
    categorical: str = "unknown_category"  # mode | unknown_category

    def __post_init__(self):
        if self.numeric not in ("mean", "median"):
            raise ValueError(f"unknown numeric policy {self.numeric!r}")
        if self.categorical not in ("mode", "unknown_category"):
            raise ValueError(f"unknown categorical policy {self.categorical!r}")


UNKNOWN = "Unknown"


# --- imputation -------------------------------------------------------------

def numeric_fill_value(observed: Sequence[float], policy: str) -> float:
    if len(observed) == 0:
        raise AllMissing()
    arr = np.asarray(observed, dtype=np.float64)
    return float(np.mean(arr) if policy == "mean" else np.median(arr))


def impute_numeric(column: Sequence[Optional[float]], policy: str) -> list[float]:
    """Replace missing entries with the mean or median of observed ones."""
    observed = [v for v in column if v is not None]
    if not observed:
        raise AllMissing()
    fill = numeric_fill_value(observed, policy)
    return [fill if v is None else float(v) for v in column]


def categorical_fill_value(observed: Sequence[str], policy: str) -> str:
    if policy == "unknown_category":
        return UNKNOWN
    if not observed:
        raise AllMissing()
    counts: dict[str, int] = {}
    for v in observed:
        counts[v] = counts.get(v, 0) + 1
    top = max(counts.values())
    return min(v for v, c in counts.items() if c == top)  # tie -> smallest


def impute_categorical(column: Sequence[Optional[str]], policy: str) -> list[str]:
    """Fill with the most frequent value (ties break lexicographically) or
    the literal "Unknown" category."""
    observed = [v for v in column if v is not None]
    fill = categorical_fill_value(observed, policy)
    return [fill if v is None else v for v in column]


# --- selection scores ---------------------------------------------------------

def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Sample Pearson correlation in [-1, 1]."""
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.shape != ya.shape or xa.ndim != 1 or xa.size < 2:
        raise ZeroVariance("pearson needs two equal-length vectors of size >= 2")
    dx = xa - xa.mean()
    dy = ya - ya.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ZeroVariance("pearson undefined for a constant vector")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def equal_frequency_bins(y: Sequence[float], bins: int) -> np.ndarray:
    """Bin labels in [0, bins) by rank; earlier bins take the remainder."""
    ya = np.asarray(y, dtype=np.float64)
    n = ya.size
    order = np.argsort(ya, kind="stable")
    labels = np.empty(n, dtype=np.int64)
    labels[order] = (np.arange(n) * bins) // max(n, 1)
    return labels


def mutual_information(x: Sequence[str], y: Sequence[float], bins: int = 10) -> float:
    """Plug-in mutual information (nats) between a discrete column and a
    continuous target discretized into equal-frequency bins."""
    n = len(x)
    if n != len(y):
        raise ZeroVariance("mutual_information needs equal-length inputs")
    if n == 0:
        return 0.0
    yb = equal_frequency_bins(y, bins)
    joint: dict[tuple[str, int], int] = {}
    px: dict[str, int] = {}
    py: dict[int, int] = {}
    for a, b in zip(x, yb):
        b = int(b)
        joint[(a, b)] = joint.get((a, b), 0) + 1
        px[a] = px.get(a, 0) + 1
        py[b] = py.get(b, 0) + 1
    mi = 0.0
    for (a, b), c in joint.items():
        p_ab = c / n
        mi += p_ab * math.log(p_ab * n * n / (px[a] * py[b]))
    return max(0.0, mi)


def redundant_pairs(columns: Mapping[str, Sequence[Optional[str]]]):
    """Bijective column pairs; missing cells count as their own value."""
    pairs = []
    for a, b in combinations(sorted(columns), 2):
        fwd: dict = {}
        rev: dict = {}
        bijective = True
        for va, vb in zip(columns[a], columns[b]):
            if fwd.setdefault(va, vb) != vb or rev.setdefault(vb, va) != va:
                bijective = False
                break
        if bijective:
            pairs.append((a, b))
    return pairs


def drop_redundant(table: RawTable):
    """Among categorical columns, drop one of every bijective pair: prefer
    the name containing "id", else the lexicographically later name.

    Returns (kept names, [(dropped, kept_counterpart), ...]).
    """
    names = table.schema.names_with_role(Role.CATEGORICAL)
    columns = {n: table.column(n) for n in names}
    return drop_redundant_columns(columns)


def drop_redundant_columns(columns: Mapping[str, Sequence[Optional[str]]]):
    kept = set(columns)
    dropped: list[tuple[str, str]] = []
    for a, b in redundant_pairs(columns):
        if a not in kept or b not in kept:
            continue
        a_id = "id" in a.lower()
        b_id = "id" in b.lower()
        if a_id and not b_id:
            victim, keeper = a, b
        elif b_id and not a_id:
            victim, keeper = b, a
        else:
            victim, keeper = max(a, b), min(a, b)
        kept.discard(victim)
        dropped.append((victim, keeper))
    return kept, dropped


def select_features(scores: Mapping[str, Mapping[str, float]], k: int,
                    always_keep: Sequence[str] = ()) -> set[str]:
    """Union over scoring methods of each method's top-k names by absolute
    score (ties break lexicographically), plus the always-keep names."""
    if k < 1:
        raise ValueError("k must be >= 1")
    kept = set(always_keep)
    for method in scores:
        ranked = sorted(scores[method], key=lambda n: (-abs(scores[method][n]), n))
        kept.update(ranked[:k])
    return kept


# --- encoding / scaling -------------------------------------------------------

def fit_one_hot(column: Sequence[str], include_unknown: bool = False) -> tuple[str, ...]:
    """Sorted category vocabulary; optionally guarantees an "Unknown" slot."""
    values = set(column)
    if include_unknown:
        values.add(UNKNOWN)
    return tuple(sorted(values))


def apply_one_hot(vocab: Sequence[str], column: Sequence[str],
                  column_name: str = "") -> np.ndarray:
    """0/1 block of shape (n, len(vocab)); unseen values map to the Unknown
    column when present, else to an all-zero row plus a warning."""
    index = {v: i for i, v in enumerate(vocab)}
    unknown_idx = index.get(UNKNOWN)
    block = np.zeros((len(column), len(vocab)), dtype=np.float64)
    unseen = 0
    for r, v in enumerate(column):
        i = index.get(v)
        if i is None:
            unseen += 1
            if unknown_idx is None:
                continue
            i = unknown_idx
        block[r, i] = 1.0
    if unseen and unknown_idx is None:
        warnings.warn(
            f"{unseen} value(s) outside the training vocabulary of "
            f"{column_name or 'a categorical column'} were zero-encoded",
            UnseenCategoryWarning, stacklevel=2)
    return block


def fit_scaler(column: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(column, dtype=np.float64)
    if arr.size == 0:
        raise AllMissing()
    return float(arr.min()), float(arr.max())


def apply_scaler(state: tuple[float, float], column: Sequence[float]) -> np.ndarray:
    """Min-max scale to [0, 1]; constant columns map to zeros; out-of-range
    apply-time values clip to [0, 1]."""
    mn, mx = state
    arr = np.asarray(column, dtype=np.float64)
    if mx == mn:
        return np.zeros_like(arr)
    return np.clip((arr - mn) / (mx - mn), 0.0, 1.0)


# --- matrix -------------------------------------------------------------------

@dataclass
class FeatureMatrix:
    column_names: list[str]
    values: np.ndarray            # (n, d) float64
    target: np.ndarray            # (n,) float64
    group_tags: dict[str, str]    # column -> onehot:<col> | numeric | geolocation | embedding
    row_index: np.ndarray = field(default=None)  # original table row per matrix row

    def __post_init__(self):
        if self.values.shape[0] != self.target.shape[0]:
            raise RowCountMismatch(
                f"{self.values.shape[0]} rows vs {self.target.shape[0]} targets")
        if self.row_index is None:
            self.row_index = np.arange(self.values.shape[0], dtype=np.int64)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def rows(self, idx) -> "FeatureMatrix":
        idx = np.asarray(idx, dtype=np.int64)
        return FeatureMatrix(self.column_names, self.values[idx],
                             self.target[idx], dict(self.group_tags),
                             self.row_index[idx])

    def without_groups(self, tags) -> "FeatureMatrix":
        """Copy minus all columns whose group tag is in ``tags``."""
        tags = set(tags)
        keep = [i for i, name in enumerate(self.column_names)
                if self.group_tags[name] not in tags]
        names = [self.column_names[i] for i in keep]
        return FeatureMatrix(
            names, np.ascontiguousarray(self.values[:, keep]), self.target,
            {n: self.group_tags[n] for n in names}, self.row_index)

    def materialize(self, train_idx, test_idx):
        """Fold protocol used by cross_validate; plain row slicing (states
        are assumed prefit for a bare matrix)."""
        return self.rows(train_idx), self.rows(test_idx)


@dataclass(frozen=True)
class NumericState:
    fill: float
    bounds: tuple[float, float]


@dataclass(frozen=True)
class CategoricalState:
    fill: str
    vocab: tuple[str, ...]


@dataclass(frozen=True)
class EncoderState:
    """Per-column training-time vocabularies (sorted, deterministic)."""
    columns: Mapping[str, CategoricalState]


@dataclass(frozen=True)
class ScalerState:
    """Per-column (min, max) observed on training rows, plus fill values."""
    columns: Mapping[str, NumericState]


def assemble_matrix(table: RawTable, encoder: EncoderState, scaler: ScalerState,
                    embeddings: Optional[np.ndarray], include_geo: bool,
                    geo_fill: Optional[tuple[float, float]] = None) -> FeatureMatrix:
    """Assemble the feature matrix for *all* rows of a table using fitted
    states. Every target cell must be present."""
    n = table.n_rows
    target = np.empty(n, dtype=np.float64)
    tname = table.schema.target_name
    for i, cell in enumerate(table.column(tname)):
        if cell is None:
            raise InvalidTarget(i, "<missing>")
        target[i] = float(cell)

    cat_cols = {}
    for name in encoder.columns:
        raw = table.column(name)
        st = encoder.columns[name]
        cat_cols[name] = [st.fill if c is None else c for c in raw]
    num_cols = {}
    for name in scaler.columns:
        raw = table.column(name)
        st = scaler.columns[name]
        vals = np.array([float(c) if c is not None and _is_float(c) else np.nan
                         for c in raw], dtype=np.float64)
        vals[np.isnan(vals)] = st.fill
        num_cols[name] = vals

    lat = lon = None
    if include_geo:
        gname = table.schema.geolocation_name
        if gname is None:
            raise RowCountMismatch("schema has no geolocation column")
        lat, lon = geo_arrays(table.column(gname))
        if np.isnan(lat).any() or np.isnan(lon).any():
            if geo_fill is None:
                raise AllMissing(gname)
            lat = np.where(np.isnan(lat), geo_fill[0], lat)
            lon = np.where(np.isnan(lon), geo_fill[1], lon)

    if embeddings is not None and embeddings.shape[0] != n:
        raise RowCountMismatch(
            f"{embeddings.shape[0]} embeddings for {n} rows")

    return _assemble(n, cat_cols, {k: encoder.columns[k].vocab for k in encoder.columns},
                     num_cols, {k: scaler.columns[k].bounds for k in scaler.columns},
                     lat, lon, embeddings, target, np.arange(n, dtype=np.int64))


def _is_float(cell: str) -> bool:
    try:
        return math.isfinite(float(cell))
    except ValueError:
        return False


def geo_arrays(column: Sequence[Optional[str]]):
    """Latitude/longitude arrays from raw geolocation cells; missing or
    unparseable cells become NaN (imputed downstream)."""
    n = len(column)
    lat = np.full(n, np.nan)
    lon = np.full(n, np.nan)
    bad = 0
    for i, cell in enumerate(column):
        if cell is None:
            continue
        try:
            point = parse_geolocation(cell)
        except Exception:
            bad += 1
            continue
        lat[i] = point.latitude
        lon[i] = point.longitude
    if bad:
        warnings.warn(f"{bad} geolocation cell(s) could not be parsed and were "
                      "treated as missing", UserWarning, stacklevel=2)
    return lat, lon


def _assemble(n, cat_cols, vocabs, num_cols, bounds, lat, lon, embeddings,
              target, row_index) -> FeatureMatrix:
    blocks = []
    names: list[str] = []
    tags: dict[str, str] = {}
    for cname in sorted(cat_cols):
        vocab = vocabs[cname]
        blocks.append(apply_one_hot(vocab, cat_cols[cname], cname))
        for v in vocab:
            col = f"{cname}={v}"
            names.append(col)
            tags[col] = f"onehot:{cname}"
    for cname in sorted(num_cols):
        blocks.append(apply_scaler(bounds[cname], num_cols[cname]).reshape(-1, 1))
        names.append(cname)
        tags[cname] = "numeric"
    if lat is not None:
        blocks.append(np.asarray(lat, dtype=np.float64).reshape(-1, 1))
        blocks.append(np.asarray(lon, dtype=np.float64).reshape(-1, 1))
        names.extend(["latitude", "longitude"])
        tags["latitude"] = "geolocation"
        tags["longitude"] = "geolocation"
    if embeddings is not None:
        emb = np.asarray(embeddings, dtype=np.float64)
        blocks.append(emb)
        for j in range(emb.shape[1]):
            col = f"e{j}"
            names.append(col)
            tags[col] = "embedding"
    if blocks:
        values = np.ascontiguousarray(np.hstack(blocks))
    else:
        values = np.zeros((n, 0), dtype=np.float64)
    return FeatureMatrix(names, values, np.asarray(target, dtype=np.float64),
                         tags, row_index)


# --- fitted pipeline state (artifact DMVP1) -----------------------------------

@dataclass(frozen=True)
class PreprocessState:
    policy: ImputationPolicy
    numeric: dict[str, NumericState]          # selected numeric columns
    categorical: dict[str, CategoricalState]  # selected categorical columns
    selected: tuple[str, ...]                 # all selected source columns
    dropped_redundant: tuple[tuple[str, str], ...]
    include_geo: bool
    geo_fill: Optional[tuple[float, float]]
    embedding_dim: int                        # 0 = no embedding block
    provider_id: str
    model_id: str
    text_columns: tuple[str, ...]

    @property
    def encoder(self) -> EncoderState:
        return EncoderState(self.categorical)

    @property
    def scaler(self) -> ScalerState:
        return ScalerState(self.numeric)


def save_state(state: PreprocessState, path) -> None:
    parts = [PREP_MAGIC, struct.pack("<I", PREP_VERSION)]
    parts.append(struct.pack(
        "<BB", 0 if state.policy.numeric == "mean" else 1,
        0 if state.policy.categorical == "mode" else 1))
    parts.append(struct.pack("<I", len(state.numeric)))
    for name in sorted(state.numeric):
        st = state.numeric[name]
        parts.append(pack_str(name))
        parts.append(struct.pack("<3d", st.fill, st.bounds[0], st.bounds[1]))
    parts.append(struct.pack("<I", len(state.categorical)))
    for name in sorted(state.categorical):
        st = state.categorical[name]
        parts.append(pack_str(name))
        parts.append(pack_str(st.fill))
        parts.append(struct.pack("<I", len(st.vocab)))
        for v in st.vocab:
            parts.append(pack_str(v))
    parts.append(struct.pack("<I", len(state.selected)))
    for name in state.selected:
        parts.append(pack_str(name))
    parts.append(struct.pack("<I", len(state.dropped_redundant)))
    for a, b in state.dropped_redundant:
        parts.append(pack_str(a))
        parts.append(pack_str(b))
    has_geo_fill = state.geo_fill is not None
    parts.append(struct.pack(
        "<BB2d", 1 if state.include_geo else 0, 1 if has_geo_fill else 0,
        state.geo_fill[0] if has_geo_fill else 0.0,
        state.geo_fill[1] if has_geo_fill else 0.0))
    parts.append(struct.pack("<I", state.embedding_dim))
    parts.append(pack_str(state.provider_id))
    parts.append(pack_str(state.model_id))
    parts.append(struct.pack("<I", len(state.text_columns)))
    for name in state.text_columns:
        parts.append(pack_str(name))
    try:
        with open(path, "wb") as fh:
            fh.write(b"".join(parts))
    except OSError as exc:
        raise IoFailure(f"cannot write preprocessing state to {path}: {exc}") from exc


def load_state(path) -> PreprocessState:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read preprocessing state from {path}: {exc}") from exc
    rd = Reader(data, what="preprocessing state file")
    if rd.take(len(PREP_MAGIC)) != PREP_MAGIC:
        raise BadMagic(f"{path} is not a preprocessing state file")
    (version,) = rd.unpack("<I")
    if version != PREP_VERSION:
        raise VersionUnsupported(version)
    num_pol, cat_pol = rd.unpack("<BB")
    policy = ImputationPolicy(
        numeric="mean" if num_pol == 0 else "median",
        categorical="mode" if cat_pol == 0 else "unknown_category")
    (n_num,) = rd.unpack("<I")
    numeric = {}
    for _ in range(n_num):
        name = rd.read_str()
        fill, mn, mx = rd.unpack("<3d")
        numeric[name] = NumericState(fill=fill, bounds=(mn, mx))
    (n_cat,) = rd.unpack("<I")
    categorical = {}
    for _ in range(n_cat):
        name = rd.read_str()
        fill = rd.read_str()
        (n_vocab,) = rd.unpack("<I")
        vocab = tuple(rd.read_str() for _ in range(n_vocab))
        categorical[name] = CategoricalState(fill=fill, vocab=vocab)
    (n_sel,) = rd.unpack("<I")
    selected = tuple(rd.read_str() for _ in range(n_sel))
    (n_drop,) = rd.unpack("<I")
    dropped = tuple((rd.read_str(), rd.read_str()) for _ in range(n_drop))
    include_geo_b, has_fill, glat, glon = rd.unpack("<BB2d")
    (emb_dim,) = rd.unpack("<I")
    provider_id = rd.read_str()
    model_id = rd.read_str()
    (n_text,) = rd.unpack("<I")
    text_columns = tuple(rd.read_str() for _ in range(n_text))
    rd.expect_end()
    return PreprocessState(
        policy=policy, numeric=numeric, categorical=categorical,
        selected=selected, dropped_redundant=dropped,
        include_geo=bool(include_geo_b),
        geo_fill=(glat, glon) if has_fill else None,
        embedding_dim=emb_dim, provider_id=provider_id, model_id=model_id,
        text_columns=text_columns)


# --- the fold-aware pipeline ----------------------------------------------------

SELECTION_FOREST_TREES = 25


@dataclass
class ParsedColumns:
    """Typed columns of the modeled rows (missing target rows dropped)."""

    categorical: dict[str, list[Optional[str]]]
    numeric: dict[str, np.ndarray]   # NaN = missing/unparseable
    lat: Optional[np.ndarray]
    lon: Optional[np.ndarray]
    y: np.ndarray
    row_index: np.ndarray            # original table row ordinals

    @property
    def n_rows(self) -> int:
        return self.y.size


def prepare_columns(table: RawTable) -> ParsedColumns:
    """Parse raw cells into typed columns, dropping rows whose target is
    missing (labels are never imputed)."""
    tname = table.schema.target_name
    raw_target = table.column(tname)
    keep = [i for i, c in enumerate(raw_target) if c is not None]
    y = np.array([float(raw_target[i]) for i in keep], dtype=np.float64)

    categorical = {}
    for name in table.schema.names_with_role(Role.CATEGORICAL):
        col = table.column(name)
        categorical[name] = [col[i] for i in keep]
    numeric = {}
    for name in table.schema.names_with_role(Role.NUMERICAL):
        col = table.column(name)
        numeric[name] = np.array(
            [float(col[i]) if col[i] is not None and _is_float(col[i]) else np.nan
             for i in keep], dtype=np.float64)

    lat = lon = None
    gname = table.schema.geolocation_name
    if gname is not None:
        col = table.column(gname)
        lat_all, lon_all = geo_arrays(col)
        lat = lat_all[keep]
        lon = lon_all[keep]
    return ParsedColumns(categorical=categorical, numeric=numeric, lat=lat,
                         lon=lon, y=y,
                         row_index=np.asarray(keep, dtype=np.int64))


@dataclass
class PipelinePlan:
    """One pipeline variant (a "method"): preprocessing configuration plus
    optional per-row embeddings. ``materialize`` refits every state on the
    training rows, then transforms both sides."""

    columns: ParsedColumns
    policy: ImputationPolicy = ImputationPolicy()
    selection_k: int = 10
    mi_bins: int = 10
    include_geo: bool = True
    embeddings: Optional[np.ndarray] = None
    provider_id: str = ""
    model_id: str = ""
    text_columns: tuple[str, ...] = ()
    selection_seed: int = 42
    n_jobs: int = -1
    # optional fold-state memo, shareable ONLY between plans that differ just
    # in their embedding block (fitted states never depend on embeddings)
    state_cache: Optional[dict] = None

    def __post_init__(self):
        if self.embeddings is not None and \
                self.embeddings.shape[0] != self.columns.n_rows:
            raise RowCountMismatch(
                f"{self.embeddings.shape[0]} embeddings for "
                f"{self.columns.n_rows} rows")

    @property
    def n_rows(self) -> int:
        return self.columns.n_rows

    def fit_states(self, train_idx) -> PreprocessState:
        train_idx = np.asarray(train_idx, dtype=np.int64)
        if self.state_cache is not None:
            key = train_idx.tobytes()
            if key not in self.state_cache:
                self.state_cache[key] = self._fit_states_uncached(train_idx)
            state = self.state_cache[key]
        else:
            state = self._fit_states_uncached(train_idx)
        emb_dim = 0 if self.embeddings is None else int(self.embeddings.shape[1])
        return replace(state, embedding_dim=emb_dim,
                       provider_id=self.provider_id, model_id=self.model_id,
                       text_columns=self.text_columns)

    def _fit_states_uncached(self, train_idx: np.ndarray) -> PreprocessState:
        cols = self.columns
        y_tr = cols.y[train_idx]

        num_fills: dict[str, float] = {}
        num_train: dict[str, np.ndarray] = {}
        for name, arr in cols.numeric.items():
            tr = arr[train_idx]
            observed = tr[~np.isnan(tr)]
            if observed.size == 0:
                raise AllMissing(name)
            fill = numeric_fill_value(observed, self.policy.numeric)
            num_fills[name] = fill
            num_train[name] = np.where(np.isnan(tr), fill, tr)

        cat_fills: dict[str, str] = {}
        cat_train: dict[str, list[str]] = {}
        cat_raw_train: dict[str, list[Optional[str]]] = {}
        for name, col in cols.categorical.items():
            tr = [col[i] for i in train_idx]
            cat_raw_train[name] = tr
            fill = categorical_fill_value(
                [v for v in tr if v is not None], self.policy.categorical)
            cat_fills[name] = fill
            cat_train[name] = [fill if v is None else v for v in tr]

        kept_cat, dropped = drop_redundant_columns(cat_raw_train)

        scores: dict[str, dict[str, float]] = {"pearson": {}, "mutual_information": {}}
        for name, tr in num_train.items():
            try:
                scores["pearson"][name] = pearson(tr, y_tr)
            except ZeroVariance:
                scores["pearson"][name] = 0.0
        for name in sorted(kept_cat):
            scores["mutual_information"][name] = mutual_information(
                cat_train[name], y_tr, self.mi_bins)
        scores["forest_importance"] = self._forest_scores(
            cat_train, kept_cat, num_train, y_tr)

        selected = select_features(scores, self.selection_k)
        selected &= set(kept_cat) | set(num_train)

        categorical = {
            name: CategoricalState(
                fill=cat_fills[name],
                vocab=fit_one_hot(
                    cat_train[name],
                    include_unknown=self.policy.categorical == "unknown_category"))
            for name in sorted(selected & set(kept_cat))
        }
        numeric = {
            name: NumericState(fill=num_fills[name],
                               bounds=fit_scaler(num_train[name]))
            for name in sorted(selected & set(num_train))
        }

        geo_fill = None
        if self.include_geo and cols.lat is not None:
            lat_tr = cols.lat[train_idx]
            lon_tr = cols.lon[train_idx]
            lat_obs = lat_tr[~np.isnan(lat_tr)]
            lon_obs = lon_tr[~np.isnan(lon_tr)]
            if lat_obs.size == 0:
                raise AllMissing("geolocation")
            geo_fill = (numeric_fill_value(lat_obs, self.policy.numeric),
                        numeric_fill_value(lon_obs, self.policy.numeric))

        emb_dim = 0 if self.embeddings is None else int(self.embeddings.shape[1])
        return PreprocessState(
            policy=self.policy, numeric=numeric, categorical=categorical,
            selected=tuple(sorted(selected)), dropped_redundant=tuple(dropped),
            include_geo=self.include_geo and cols.lat is not None,
            geo_fill=geo_fill, embedding_dim=emb_dim,
            provider_id=self.provider_id, model_id=self.model_id,
            text_columns=self.text_columns)

    def _forest_scores(self, cat_train, kept_cat, num_train, y_tr):
        """Importance per source column from a preliminary small forest on
        the non-embedding features."""
        vocabs = {name: fit_one_hot(cat_train[name]) for name in sorted(kept_cat)}
        bounds = {name: fit_scaler(num_train[name]) for name in sorted(num_train)}
        matrix = _assemble(
            y_tr.size, {n: cat_train[n] for n in sorted(kept_cat)}, vocabs,
            dict(num_train), bounds, None, None, None, y_tr,
            np.arange(y_tr.size, dtype=np.int64))
        if matrix.width == 0 or y_tr.size < 2 or np.all(y_tr == y_tr[0]):
            return {name: 0.0 for name in list(kept_cat) + list(num_train)}
        cfg = forest.ForestConfig(
            n_estimators=SELECTION_FOREST_TREES, random_state=self.selection_seed,
            n_jobs=self.n_jobs)
        model = forest.fit(matrix, cfg)
        per_source: dict[str, float] = {name: 0.0
                                        for name in list(kept_cat) + list(num_train)}
        for col, imp in zip(matrix.column_names, model.importances):
            tag = matrix.group_tags[col]
            source = tag.split(":", 1)[1] if tag.startswith("onehot:") else col
            per_source[source] = per_source.get(source, 0.0) + float(imp)
        return per_source

    def transform(self, state: PreprocessState, idx) -> FeatureMatrix:
        cols = self.columns
        idx = np.asarray(idx, dtype=np.int64)
        cat_cols = {}
        for name, st in state.categorical.items():
            col = cols.categorical[name]
            cat_cols[name] = [st.fill if col[i] is None else col[i] for i in idx]
        num_cols = {}
        for name, st in state.numeric.items():
            arr = cols.numeric[name][idx]
            num_cols[name] = np.where(np.isnan(arr), st.fill, arr)
        lat = lon = None
        if state.include_geo:
            lat = cols.lat[idx]
            lon = cols.lon[idx]
            if state.geo_fill is not None:
                lat = np.where(np.isnan(lat), state.geo_fill[0], lat)
                lon = np.where(np.isnan(lon), state.geo_fill[1], lon)
        emb = None if self.embeddings is None else self.embeddings[idx]
        return _assemble(
            idx.size, cat_cols, {n: state.categorical[n].vocab for n in cat_cols},
            num_cols, {n: state.numeric[n].bounds for n in num_cols},
            lat, lon, emb, cols.y[idx], cols.row_index[idx])

    def materialize(self, train_idx, test_idx):
        state = self.fit_states(train_idx)
        return self.transform(state, train_idx), self.transform(state, test_idx)
