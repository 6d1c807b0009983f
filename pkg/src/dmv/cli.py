"""Batch CLI: ingest -> preprocess -> embed -> train -> evaluate -> ablate.

Every stage writes its artifact atomically into the configured output
directory and refuses to run before its prerequisites exist. Two runs with
the same configuration produce byte-identical artifacts; the only varying
report field is ``generated`` (timestamp + wall-clock timings).

    dmv <subcommand> --config run.ini [--seed N] [--out DIR]
                     [--provider local|remote] [--no-geo]
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
import time
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone

import numpy as np

from . import ablation as ablation_mod
from . import embed as embed_mod
from . import evaluation as eval_mod
from . import forest as forest_mod
from . import plots as plots_mod
from . import preprocess as prep_mod
from . import synth as synth_mod
from .errors import ConfigError, DmvError, InvalidSchema, MissingArtifact
from .ingest import (ColumnSchema, default_schema, load_csv, load_schema_file,
                     load_table, save_table)

TABLE_ARTIFACT = "table.dmv"
PREP_ARTIFACT = "prep.dmvp"
CACHE_ARTIFACT = "embeddings.cache"
MODEL_ARTIFACT = "model.dmvf"
REPORT_ARTIFACT = "report.json"
TIMINGS_ARTIFACT = "timings.json"

VALID_METHODS = ("baseline", "local", "remote")


@dataclass(frozen=True)
class RunConfig:
    data_csv: str
    out_dir: str = "runs/out"
    schema_path: str = ""
    seed: int = 42
    include_geo: bool = True
    numeric_impute: str = "mean"
    categorical_impute: str = "unknown_category"
    selection_k: int = 10
    mi_bins: int = 10
    provider: str = "local"
    embed_dimension: int = 256
    embed_seed: int = 42
    embed_model: str = ""
    endpoint: str = ""
    api_key_env: str = "DMV_EMBED_API_KEY"
    batch_size: int = 16
    max_retries: int = 3
    timeout: float = 30.0
    text_columns: tuple[str, ...] = ()
    forest: forest_mod.ForestConfig = field(default_factory=forest_mod.ForestConfig)
    cv_k: tuple[int, ...] = (5, 10)
    holdout_fraction: float = 0.2
    methods: tuple[str, ...] = ("baseline", "local")
    ablation_groups: tuple[str, ...] = ("geolocation",)
    ablation_cv_k: int = 5

    @property
    def policy(self) -> prep_mod.ImputationPolicy:
        return prep_mod.ImputationPolicy(numeric=self.numeric_impute,
                                         categorical=self.categorical_impute)

    @property
    def primary_method(self) -> str:
        embed_methods = [m for m in self.methods if m != "baseline"]
        return embed_methods[-1] if embed_methods else "baseline"

    def schema(self) -> ColumnSchema:
        return load_schema_file(self.schema_path) if self.schema_path \
            else default_schema()

    def provider_config(self, kind: str) -> embed_mod.ProviderConfig:
        if kind == "local":
            return embed_mod.ProviderConfig(
                kind="local", dimension=self.embed_dimension,
                seed=self.embed_seed, model_id=self.embed_model)
        return embed_mod.ProviderConfig(
            kind="remote", endpoint=self.endpoint, model_id=self.embed_model,
            batch_size=self.batch_size, max_retries=self.max_retries,
            timeout=self.timeout, api_key_env=self.api_key_env)

    def echo(self) -> dict:
        fc = self.forest
        return {
            "data_csv": self.data_csv,
            "schema_path": self.schema_path,
            "out_dir": self.out_dir,
            "seed": self.seed,
            "include_geo": self.include_geo,
            "imputation": {"numeric": self.numeric_impute,
                           "categorical": self.categorical_impute},
            "selection_k": self.selection_k,
            "mi_bins": self.mi_bins,
            "embed": {"provider": self.provider,
                      "dimension": self.embed_dimension,
                      "seed": self.embed_seed, "model": self.embed_model,
                      "endpoint": self.endpoint,
                      "api_key_env": self.api_key_env,
                      "batch_size": self.batch_size,
                      "max_retries": self.max_retries,
                      "timeout": self.timeout,
                      "text_columns": list(self.text_columns)},
            "forest": {"n_estimators": fc.n_estimators,
                       "max_depth": fc.max_depth,
                       "min_samples_split": fc.min_samples_split,
                       "min_samples_leaf": fc.min_samples_leaf,
                       "max_features": fc.max_features,
                       "bootstrap": fc.bootstrap,
                       "random_state": fc.random_state,
                       "n_jobs": fc.n_jobs},
            "cv_k": list(self.cv_k),
            "holdout_fraction": self.holdout_fraction,
            "methods": list(self.methods),
            "ablation": {"groups": list(self.ablation_groups),
                         "cv_k": self.ablation_cv_k},
        }


def _get(cp: configparser.ConfigParser, section: str, option: str, fallback):
    if not cp.has_option(section, option):
        return fallback
    raw = cp.get(section, option).strip()
    if raw == "":
        return fallback
    if isinstance(fallback, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{section}] {option}: expected a boolean, got {raw!r}")
    if isinstance(fallback, int):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {option}: expected an integer, got {raw!r}") from None
    if isinstance(fallback, float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {option}: expected a number, got {raw!r}") from None
    return raw


def _get_list(cp, section, option, fallback):
    if not cp.has_option(section, option):
        return fallback
    raw = cp.get(section, option).strip()
    if raw == "":
        return fallback
    return tuple(part.strip() for part in raw.split(",") if part.strip())


def load_config(path) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file {path!r} does not exist")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    base = os.path.dirname(os.path.abspath(path))

    def respath(p: str) -> str:
        return p if not p or os.path.isabs(p) else os.path.normpath(os.path.join(base, p))

    data_csv = respath(_get(cp, "data", "csv", ""))
    if not data_csv:
        raise ConfigError("config needs [data] csv = <path>")
    if not os.path.exists(data_csv):
        raise ConfigError(f"[data] csv: {data_csv!r} does not exist")
    schema_path = respath(_get(cp, "data", "schema", ""))
    if schema_path and not os.path.exists(schema_path):
        raise ConfigError(f"[data] schema: {schema_path!r} does not exist")

    max_depth_raw = _get(cp, "forest", "max_depth", "none")
    if isinstance(max_depth_raw, str) and max_depth_raw.lower() in ("none", ""):
        max_depth = None
    else:
        try:
            max_depth = int(max_depth_raw)
        except ValueError:
            raise ConfigError(f"[forest] max_depth: {max_depth_raw!r}") from None
    mf_raw = str(_get(cp, "forest", "max_features", "all")).lower()
    max_features: forest_mod.MaxFeatures
    if mf_raw in ("all", "auto"):  # `auto` is accepted as the historical alias
        max_features = "all"
    elif mf_raw == "sqrt":
        max_features = "sqrt"
    else:
        try:
            max_features = int(mf_raw)
        except ValueError:
            raise ConfigError(f"[forest] max_features: {mf_raw!r}") from None
    try:
        fc = forest_mod.ForestConfig(
            n_estimators=_get(cp, "forest", "n_estimators", 100),
            max_depth=max_depth,
            min_samples_split=_get(cp, "forest", "min_samples_split", 2),
            min_samples_leaf=_get(cp, "forest", "min_samples_leaf", 1),
            max_features=max_features,
            bootstrap=_get(cp, "forest", "bootstrap", True),
            random_state=_get(cp, "forest", "random_state", 42),
            n_jobs=_get(cp, "forest", "n_jobs", -1),
        )
    except ValueError as exc:
        raise ConfigError(f"[forest]: {exc}") from exc

    methods = _get_list(cp, "eval", "methods", ("baseline", "local"))
    for m in methods:
        if m not in VALID_METHODS:
            raise ConfigError(f"[eval] methods: unknown method {m!r}")
    cv_k = tuple(int(k) for k in _get_list(cp, "eval", "cv_k", ("5", "10")))

    cfg = RunConfig(
        data_csv=data_csv,
        schema_path=schema_path,
        out_dir=respath(_get(cp, "run", "out", "runs/out")),
        seed=_get(cp, "run", "seed", 42),
        include_geo=_get(cp, "run", "include_geo", True),
        numeric_impute=_get(cp, "preprocess", "numeric_impute", "mean"),
        categorical_impute=_get(cp, "preprocess", "categorical_impute",
                                "unknown_category"),
        selection_k=_get(cp, "preprocess", "selection_k", 10),
        mi_bins=_get(cp, "preprocess", "mi_bins", 10),
        provider=_get(cp, "embed", "provider", "local"),
        embed_dimension=_get(cp, "embed", "dimension", 256),
        embed_seed=_get(cp, "embed", "seed", 42),
        embed_model=_get(cp, "embed", "model", ""),
        endpoint=_get(cp, "embed", "endpoint", ""),
        api_key_env=_get(cp, "embed", "api_key_env", "DMV_EMBED_API_KEY"),
        batch_size=_get(cp, "embed", "batch_size", 16),
        max_retries=_get(cp, "embed", "max_retries", 3),
        timeout=_get(cp, "embed", "timeout", 30.0),
        text_columns=_get_list(cp, "embed", "text_columns", ()),
        forest=fc,
        cv_k=cv_k,
        holdout_fraction=_get(cp, "eval", "holdout", 0.2),
        methods=methods,
        ablation_groups=_get_list(cp, "ablation", "groups", ("geolocation",)),
        ablation_cv_k=_get(cp, "ablation", "cv_k", 5),
    )
    return _validate_config(cfg)


def _validate_config(cfg: RunConfig) -> RunConfig:
    try:
        cfg.policy
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.provider not in ("local", "remote"):
        raise ConfigError(f"embed provider must be local or remote, got {cfg.provider!r}")
    if "remote" in cfg.methods and not cfg.endpoint:
        raise ConfigError("method 'remote' requires [embed] endpoint")
    if not cfg.methods:
        raise ConfigError("at least one method is required")
    if not (0.0 < cfg.holdout_fraction < 1.0):
        raise ConfigError("holdout fraction must be in (0, 1)")
    for k in (*cfg.cv_k, cfg.ablation_cv_k):
        if k < 2:
            raise ConfigError(f"cv k must be >= 2, got {k}")
    return cfg


def apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "out", None):
        cfg = replace(cfg, out_dir=os.path.abspath(args.out))
    if getattr(args, "provider", None):
        methods = tuple(m for m in cfg.methods if m == "baseline")
        cfg = replace(cfg, provider=args.provider,
                      methods=methods + (args.provider,))
        cfg = _validate_config(cfg)
    if getattr(args, "no_geo", False):
        cfg = replace(cfg, include_geo=False)
    return cfg


# --- artifact helpers -----------------------------------------------------------

def _path(cfg: RunConfig, name: str) -> str:
    return os.path.join(cfg.out_dir, name)


def _require(cfg: RunConfig, name: str, produced_by: str) -> str:
    path = _path(cfg, name)
    if not os.path.exists(path):
        raise MissingArtifact(path, produced_by)
    return path


def _atomic(path: str, write_fn) -> None:
    tmp = path + ".tmp"
    write_fn(tmp)
    os.replace(tmp, path)


def _record_timing(cfg: RunConfig, stage: str, seconds: float) -> None:
    path = _path(cfg, TIMINGS_ARTIFACT)
    timings = {}
    if os.path.exists(path):
        with open(path, "r", encoding="utf-8") as fh:
            timings = json.load(fh)
    timings[stage] = round(seconds, 3)
    _atomic(path, lambda p: _dump_json(timings, p))


def _dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_report(cfg: RunConfig) -> dict:
    with open(_require(cfg, REPORT_ARTIFACT, "evaluate"), "r",
              encoding="utf-8") as fh:
        return json.load(fh)


def _metrics_dict(m: eval_mod.Metrics) -> dict:
    return {"mse": m.mse, "mae": m.mae, "r2": m.r2, "evs": m.evs}


def _cv_dict(cv: eval_mod.CvResult) -> dict:
    return {"per_fold": [_metrics_dict(m) for m in cv.per_fold],
            "mean": _metrics_dict(cv.mean), "std": _metrics_dict(cv.std)}


def _round_changes(changes: dict) -> dict:
    return {k: (None if v is None else round(v, 2)) for k, v in changes.items()}


# --- shared pipeline assembly -----------------------------------------------------

def _load_inputs(cfg: RunConfig):
    table = load_table(_require(cfg, TABLE_ARTIFACT, "ingest"))
    columns = prep_mod.prepare_columns(table)
    text_columns = cfg.text_columns or embed_mod.default_text_columns(table.schema)
    texts = [embed_mod.build_text(table.record(int(i)), text_columns)
             for i in columns.row_index]
    return table, columns, text_columns, texts


def _method_embeddings(cfg: RunConfig, texts, methods=None) -> dict:
    """Embedding matrix (or None) per method, via the shared cache."""
    methods = cfg.methods if methods is None else methods
    embed_methods = [m for m in methods if m != "baseline"]
    out = {m: None for m in methods}
    if not embed_methods:
        return out
    cache = embed_mod.EmbeddingCache(_require(cfg, CACHE_ARTIFACT, "embed"))
    for m in embed_methods:
        pc = cfg.provider_config(m)
        out[m] = embed_mod.embed_texts(texts, pc, cache)
    return out


def _plans(cfg: RunConfig, columns, text_columns, embeddings: dict) -> dict:
    state_cache: dict = {}
    plans = {}
    for m in cfg.methods:
        pc = cfg.provider_config(m) if m != "baseline" else None
        plans[m] = prep_mod.PipelinePlan(
            columns=columns, policy=cfg.policy, selection_k=cfg.selection_k,
            mi_bins=cfg.mi_bins, include_geo=cfg.include_geo,
            embeddings=embeddings.get(m),
            provider_id=pc.provider_id if pc else "",
            model_id=pc.effective_model_id if pc else "",
            text_columns=tuple(text_columns),
            selection_seed=cfg.forest.random_state, n_jobs=cfg.forest.n_jobs,
            state_cache=state_cache)
    return plans


# --- stages -----------------------------------------------------------------------

def do_ingest(cfg: RunConfig) -> int:
    t0 = time.perf_counter()
    os.makedirs(cfg.out_dir, exist_ok=True)
    table = load_csv(cfg.data_csv, cfg.schema())
    _atomic(_path(cfg, TABLE_ARTIFACT), lambda p: save_table(table, p))
    _record_timing(cfg, "ingest", time.perf_counter() - t0)
    print(f"ingest: {table.n_rows} rows, {len(table.schema.names)} columns "
          f"-> {_path(cfg, TABLE_ARTIFACT)}")
    return 0


def do_preprocess(cfg: RunConfig) -> int:
    t0 = time.perf_counter()
    table, columns, text_columns, _ = _load_inputs(cfg)
    train_idx, _ = eval_mod.holdout_split(columns.n_rows, cfg.holdout_fraction,
                                          cfg.seed)
    primary = cfg.primary_method
    pc = cfg.provider_config(primary) if primary != "baseline" else None
    plan = prep_mod.PipelinePlan(
        columns=columns, policy=cfg.policy, selection_k=cfg.selection_k,
        mi_bins=cfg.mi_bins, include_geo=cfg.include_geo,
        embeddings=None, provider_id=pc.provider_id if pc else "",
        model_id=pc.effective_model_id if pc else "",
        text_columns=tuple(text_columns),
        selection_seed=cfg.forest.random_state, n_jobs=cfg.forest.n_jobs)
    state = plan.fit_states(train_idx)
    if pc is not None and pc.kind == "local":
        state = replace(state, embedding_dim=pc.dimension)
    _atomic(_path(cfg, PREP_ARTIFACT), lambda p: prep_mod.save_state(state, p))
    _record_timing(cfg, "preprocess", time.perf_counter() - t0)
    print(f"preprocess: selected {len(state.selected)} feature columns, "
          f"dropped {len(state.dropped_redundant)} redundant "
          f"-> {_path(cfg, PREP_ARTIFACT)}")
    return 0


def do_embed(cfg: RunConfig) -> int:
    t0 = time.perf_counter()
    _require(cfg, TABLE_ARTIFACT, "ingest")
    table, columns, text_columns, texts = _load_inputs(cfg)
    cache_path = _path(cfg, CACHE_ARTIFACT)
    if not os.path.exists(cache_path):
        open(cache_path, "w", encoding="utf-8").close()
    cache = embed_mod.EmbeddingCache(cache_path)
    total = 0
    for m in (m for m in cfg.methods if m != "baseline"):
        pc = cfg.provider_config(m)
        mat = embed_mod.embed_texts(texts, pc, cache)
        total += mat.shape[0]
    _record_timing(cfg, "embed", time.perf_counter() - t0)
    print(f"embed: {total} vectors cached ({len(cache)} cache entries) "
          f"-> {cache_path}")
    return 0


def do_train(cfg: RunConfig) -> int:
    t0 = time.perf_counter()
    _require(cfg, PREP_ARTIFACT, "preprocess")
    table, columns, text_columns, texts = _load_inputs(cfg)
    primary = cfg.primary_method
    embeddings = _method_embeddings(cfg, texts, methods=(primary,)) \
        if primary != "baseline" else {primary: None}
    state = prep_mod.load_state(_path(cfg, PREP_ARTIFACT))
    pc = cfg.provider_config(primary) if primary != "baseline" else None
    plan = prep_mod.PipelinePlan(
        columns=columns, policy=state.policy, selection_k=cfg.selection_k,
        mi_bins=cfg.mi_bins, include_geo=state.include_geo,
        embeddings=embeddings[primary],
        provider_id=pc.provider_id if pc else "",
        model_id=pc.effective_model_id if pc else "",
        text_columns=state.text_columns,
        selection_seed=cfg.forest.random_state, n_jobs=cfg.forest.n_jobs)
    train_idx, _ = eval_mod.holdout_split(columns.n_rows, cfg.holdout_fraction,
                                          cfg.seed)
    train_m = plan.transform(state, train_idx)
    model = forest_mod.fit(train_m, cfg.forest)
    _atomic(_path(cfg, MODEL_ARTIFACT), lambda p: forest_mod.save_model(model, p))
    _record_timing(cfg, "train", time.perf_counter() - t0)
    print(f"train: {model.n_trees} trees on {train_m.n_rows} rows x "
          f"{train_m.width} features ({primary}) -> {_path(cfg, MODEL_ARTIFACT)}")
    return 0


def do_evaluate(cfg: RunConfig) -> int:
    t0 = time.perf_counter()
    _require(cfg, PREP_ARTIFACT, "preprocess")
    model_path = _require(cfg, MODEL_ARTIFACT, "train")
    table, columns, text_columns, texts = _load_inputs(cfg)
    state = prep_mod.load_state(_path(cfg, PREP_ARTIFACT))
    embeddings = _method_embeddings(cfg, texts)
    plans = _plans(cfg, columns, text_columns, embeddings)
    plots_dir = _path(cfg, "plots")
    os.makedirs(plots_dir, exist_ok=True)

    train_idx, test_idx = eval_mod.holdout_split(
        columns.n_rows, cfg.holdout_fraction, cfg.seed)
    primary_model = forest_mod.load_model(model_path)

    holdout: dict[str, dict] = {}
    for m in cfg.methods:
        train_m, test_m = plans[m].materialize(train_idx, test_idx)
        if m == cfg.primary_method and \
                primary_model.feature_names == train_m.column_names:
            model = primary_model
        else:
            model = forest_mod.fit(train_m, cfg.forest)
        preds = forest_mod.predict_many(model, test_m.values)
        holdout[m] = _metrics_dict(eval_mod.compute_metrics(test_m.target, preds))
        records = eval_mod.residuals(test_m.target, preds,
                                     index=test_m.row_index)
        eval_mod.export_residuals(
            records, os.path.join(plots_dir, f"residuals_{m}.csv"))

    cv: dict[str, dict] = {}
    for m in cfg.methods:
        cv[m] = {}
        for k in cfg.cv_k:
            cv[m][str(k)] = _cv_dict(eval_mod.cross_validate(
                plans[m], cfg.forest, k, cfg.seed))

    if columns.lat is not None:
        mask = ~(np.isnan(columns.lat) | np.isnan(columns.lon))
        plots_mod.write_csv_rows(
            os.path.join(plots_dir, "geolocation_scatter.csv"),
            ["latitude", "longitude"],
            [[repr(float(a)), repr(float(b))]
             for a, b in zip(columns.lat[mask], columns.lon[mask])])

    n_raw = table.n_rows
    missing_rate = {
        name: (sum(1 for c in table.column(name) if c is None) / n_raw
               if n_raw else 0.0)
        for name in table.schema.names}

    _record_timing(cfg, "evaluate", time.perf_counter() - t0)
    timings = {}
    if os.path.exists(_path(cfg, TIMINGS_ARTIFACT)):
        with open(_path(cfg, TIMINGS_ARTIFACT), "r", encoding="utf-8") as fh:
            timings = json.load(fh)

    report = {
        "config": cfg.echo(),
        "dataset": {"csv_rows": n_raw, "modeled_rows": int(columns.n_rows),
                    "missing_rate": missing_rate},
        "preprocessing": {
            "selected_features": sorted(state.selected),
            "dropped_redundant": [list(pair) for pair in state.dropped_redundant],
            "embedding_dim": state.embedding_dim},
        "methods": list(cfg.methods),
        "holdout": holdout,
        "cv": cv,
        "artifacts": sorted(
            name for name in (TABLE_ARTIFACT, PREP_ARTIFACT, CACHE_ARTIFACT,
                              MODEL_ARTIFACT, REPORT_ARTIFACT)
            if os.path.exists(_path(cfg, name)) or name == REPORT_ARTIFACT),
        "generated": {"timestamp": datetime.now(timezone.utc).isoformat(),
                      "timings_sec": timings},
    }
    _atomic(_path(cfg, REPORT_ARTIFACT), lambda p: _dump_json(report, p))
    emitted = plots_mod.emit_plots(report, cfg.out_dir)
    print(f"evaluate: holdout metrics for {len(cfg.methods)} method(s), "
          f"cv at k={list(cfg.cv_k)}, {len(emitted)} plot file(s) "
          f"-> {_path(cfg, REPORT_ARTIFACT)}")
    return 0


def do_ablate(cfg: RunConfig) -> int:
    t0 = time.perf_counter()
    report = _load_report(cfg)
    table, columns, text_columns, texts = _load_inputs(cfg)
    embeddings = _method_embeddings(cfg, texts)

    method_specs = []
    for m in cfg.methods:
        pc = cfg.provider_config(m) if m != "baseline" else None
        method_specs.append(ablation_mod.MethodSpec(
            name=m, embeddings=embeddings.get(m),
            provider_id=pc.provider_id if pc else "",
            model_id=pc.effective_model_id if pc else ""))
    spec = ablation_mod.AblationSpec(
        methods=tuple(method_specs),
        groups={g: frozenset({g}) for g in cfg.ablation_groups},
        holdout_fraction=cfg.holdout_fraction, cv_k=cfg.ablation_cv_k,
        policy=cfg.policy, selection_k=cfg.selection_k, mi_bins=cfg.mi_bins)

    # the with-geolocation arm equals the evaluate-stage run (same folds,
    # same tree streams), so reuse those metrics when they are in the report
    reuse: dict[str, ablation_mod.ArmMetrics] = {}
    if cfg.include_geo:
        for m in cfg.methods:
            cv_k = str(cfg.ablation_cv_k)
            if m in report.get("holdout", {}) and \
                    cv_k in report.get("cv", {}).get(m, {}):
                reuse[m] = ablation_mod.ArmMetrics(
                    holdout=eval_mod.Metrics(**report["holdout"][m]),
                    cv=eval_mod.CvResult(
                        per_fold=(),
                        mean=eval_mod.Metrics(**report["cv"][m][cv_k]["mean"]),
                        std=eval_mod.Metrics(**report["cv"][m][cv_k]["std"])))

    result = ablation_mod.run_ablation(table, spec, cfg.forest, cfg.seed,
                                       reuse_with=reuse or None)

    block: dict[str, dict] = {}
    for (method, group), cell in result.cells.items():
        block.setdefault(method, {})[group] = {
            "holdout": {
                "with": _metrics_dict(cell.holdout.metrics_with),
                "without": _metrics_dict(cell.holdout.metrics_without),
                "change_pct": _round_changes(cell.holdout.change_pct)},
            "cv": {
                "k": cell.cv_k,
                "with": _metrics_dict(cell.cv.metrics_with),
                "without": _metrics_dict(cell.cv.metrics_without),
                "change_pct": _round_changes(cell.cv.change_pct)},
        }
    report["ablation"] = block
    _record_timing(cfg, "ablate", time.perf_counter() - t0)
    with open(_path(cfg, TIMINGS_ARTIFACT), "r", encoding="utf-8") as fh:
        report["generated"]["timings_sec"] = json.load(fh)
    report["generated"]["timestamp"] = datetime.now(timezone.utc).isoformat()
    _atomic(_path(cfg, REPORT_ARTIFACT), lambda p: _dump_json(report, p))
    emitted = plots_mod.emit_plots(report, cfg.out_dir)
    print(f"ablate: {len(result.cells)} cell(s), {len(emitted)} plot file(s) "
          f"-> {_path(cfg, REPORT_ARTIFACT)}")
    return 0


def do_run(cfg: RunConfig) -> int:
    for stage in (do_ingest, do_preprocess, do_embed, do_train, do_evaluate,
                  do_ablate):
        code = stage(cfg)
        if code != 0:
            return code
    return 0


# --- entry point --------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are validation errors (exit 1)
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", required=True, help="run configuration file (INI)")
    sub.add_argument("--seed", type=int, default=None,
                     help="override the run seed")
    sub.add_argument("--out", default=None, help="override the output directory")
    sub.add_argument("--provider", choices=("local", "remote"), default=None,
                     help="override the embedding provider method")
    sub.add_argument("--no-geo", action="store_true",
                     help="exclude latitude/longitude from the feature matrix")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dmv",
                     description="Risk-score regression pipeline: data "
                                 "processing, model training, validation.")
    subs = parser.add_subparsers(dest="command", required=True)
    stages = {
        "ingest": "load and validate the CSV into the table artifact",
        "preprocess": "fit imputation/encoding/scaling/selection states",
        "embed": "compute and cache text embeddings",
        "train": "train the forest on the hold-out training split",
        "evaluate": "hold-out and cross-validation metrics plus plots",
        "ablate": "with/without feature-group ablation study",
        "run": "run every stage in order",
    }
    for name, help_text in stages.items():
        sub = subs.add_parser(name, help=help_text)
        _add_common(sub)
        sub.set_defaults(stage=name)

    synth = subs.add_parser("synth", help="generate a synthetic CDC-shaped CSV")
    synth.add_argument("--out", required=True, help="output CSV path")
    synth.add_argument("--rows", type=int, default=1000)
    synth.add_argument("--seed", type=int, default=42)
    synth.add_argument("--noise", type=float, default=0.0,
                       help="gaussian noise added to the target")
    synth.add_argument("--no-geo-signal", action="store_true",
                       help="drop the latitude term from the planted target")
    synth.set_defaults(stage="synth")
    return parser


_STAGES = {
    "ingest": do_ingest,
    "preprocess": do_preprocess,
    "embed": do_embed,
    "train": do_train,
    "evaluate": do_evaluate,
    "ablate": do_ablate,
    "run": do_run,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.stage == "synth":
            synth_mod.write_csv(
                args.out, args.rows, args.seed,
                synth_mod.SynthOptions(noise_sd=args.noise,
                                       plant_geo=not args.no_geo_signal))
            print(f"synth: wrote {args.rows} rows -> {args.out}")
            return 0
        cfg = apply_overrides(load_config(args.config), args)
        return _STAGES[args.stage](cfg)
    except (ConfigError, MissingArtifact, InvalidSchema) as exc:
        print(f"dmv {args.stage}: {exc}", file=sys.stderr)
        return 1
    except DmvError as exc:
        print(f"dmv {args.stage}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"dmv {args.stage}: unexpected failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
