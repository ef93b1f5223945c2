"""``fedfair`` command line: generate, evaluate, simulate and document federations from one JSON config.

Exit codes: 0 ok, 2 config error, 3 data error, 4 runtime failure. The log
level comes from ``FEDFAIR_LOG_LEVEL`` (default ``WARNING``).
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from . import __version__
from .bias import Modification, apply_modifications
from .errors import (
    ConfigError,
    FedFairError,
    IngestError,
    MetricUndefined,
    PartitionError,
    SchemaError,
    TrainingError,
)
from .fairness import LEVELS, METRICS, FairnessReport, bias_label, fairness_table
from .fl import (
    FairRegConfig,
    FLConfig,
    evaluate_global,
    evaluate_models,
    run_fair_fedavg,
    run_fedavg,
)
from .ingest import (
    RACE_BINARY,
    RACE_FIVE,
    STATE_FIPS,
    TASKS,
    RemapConfig,
    SyntheticSpec,
    apply_remap,
    dump_json,
    load_csv,
    load_task_csv,
    read_federation,
    write_federation,
)
from .models import TRAINERS, TrainConfig, trainer
from .partition import (
    PartitionConfig,
    SplitFractions,
    split_by_key,
    split_federation,
    subpartition_federation,
)
from .recipes import (
    DEMOS,
    RECIPES,
    ThresholdSearch,
    bias_clients,
    device_from_silo,
    load_recipe,
)
from .report import (
    client_stats,
    client_stats_columns,
    compare,
    emit_svg,
    generate_datasheet,
    render_bias_map,
    rows_to_csv,
)
from .seeding import derive_seed
from .tabular import ColumnSchema, FederatedDataset, SplitSet

log = logging.getLogger("fedfair")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4
MAX_SEED = 2**64 - 1
REMAP_PRESETS = {"race_binary": RACE_BINARY, "race_five": RACE_FIVE}
TOP_LEVEL = (
    "name", "seed", "output_dir", "source", "sensitive_attrs", "remap", "partition",
    "split_fractions", "fairness", "modifications", "threshold_search", "device",
    "models", "fl", "fair", "evaluation",
)
EVAL_MODES = ("auto", "cross_silo", "cross_device")


@dataclass
class CsvSource:
    path: Path
    task: str | None
    schema: tuple[ColumnSchema, ...]
    sensitive_attrs: tuple[str, ...]
    label_column: str
    label_threshold: float | None
    label_equals: int | None
    key_column: str
    states: list[str]
    year: int
    horizon: str


@dataclass
class PipelineConfig:
    raw: dict
    seed: int
    output_dir: Path
    synthetic: SyntheticSpec | None
    csv: CsvSource | None
    sensitive_attrs: list[str]
    remap: RemapConfig | None
    partition: PartitionConfig | None
    split_fractions: SplitFractions
    metric: str
    level: str
    intersections: list[tuple[str, ...]]
    modifications: list[Modification]
    threshold_search: ThresholdSearch | None
    device: dict | None
    models: dict[str, TrainConfig]
    fl: FLConfig
    fair: FairRegConfig | None
    eval_mode: str
    local_model: str
    name: str = ""
    seeds: dict = field(default_factory=dict)

    @property
    def fairness_attrs(self) -> list:
        return list(self.sensitive_attrs) + [tuple(i) for i in self.intersections]

    def trainers(self):
        return [trainer(kind, cfg) for kind, cfg in self.models.items()]


# ---------------------------------------------------------------- config parsing


def _section(raw: dict, key: str, default=None) -> Any:
    v = raw.get(key, default)
    return copy.deepcopy(v)


def _build(field_name: str, fn, *args, **kwargs):
    """Run a constructor and turn any validation error into a ConfigError naming ``field_name``."""
    try:
        return fn(*args, **kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError, FedFairError) as e:
        raise ConfigError(field_name, str(e)) from None


def _expect(field_name: str, value, kind, what: str):
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ConfigError(field_name, f"expected {what}, got {type(value).__name__}")
    return value


def _check_keys(field_name: str, d: dict, allowed) -> None:
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"{field_name}.{unknown[0]}" if field_name else unknown[0], "unknown key")


def _dataclass_keys(cls) -> list[str]:
    return [f.name for f in fields(cls)]


def _parse_csv_source(d: dict, base_dir: Path) -> CsvSource:
    _check_keys("source.csv", d, ("path", "task", "schema", "sensitive_attrs", "label_column",
                                  "label_threshold", "label_equals", "key_column", "states", "year", "horizon"))
    if "path" not in d:
        raise ConfigError("source.csv.path", "required")
    path = Path(_expect("source.csv.path", d["path"], str, "a string"))
    if not path.is_absolute():
        path = base_dir / path
    if "task" in d:
        if d["task"] not in TASKS:
            raise ConfigError("source.csv.task", f"unknown task {d['task']!r}; choose from {sorted(TASKS)}")
        if "schema" in d:
            raise ConfigError("source.csv.schema", "give either task or schema, not both")
        t = TASKS[d["task"]]
        schema, sens, label_col = t.schema, t.sensitive_attrs, t.label_column
        thr, eq, key = t.label_threshold, t.label_equals, t.key_column
    else:
        if "schema" not in d:
            raise ConfigError("source.csv.schema", "required when no task is given")
        schema = _build("source.csv.schema", lambda: tuple(ColumnSchema.from_dict(c) for c in d["schema"]))
        sens = tuple(d.get("sensitive_attrs", ()))
        label_col = d.get("label_column", "label")
        thr, eq = d.get("label_threshold"), d.get("label_equals")
        key = d.get("key_column", "ST")
        if thr is not None and eq is not None:
            raise ConfigError("source.csv.label_equals", "give at most one of label_threshold and label_equals")
    names = {c.name for c in schema}
    if key not in names:
        raise ConfigError("source.csv.key_column", f"{key!r} is not a schema column")
    states = list(d.get("states", []))
    unknown = [s for s in states if s not in STATE_FIPS.values()]
    if unknown:
        raise ConfigError("source.csv.states", f"unknown states {unknown}")
    return CsvSource(
        path, d.get("task"), schema, sens, label_col, thr, eq, key, states,
        int(d.get("year", 2018)), str(d.get("horizon", "1-Year")),
    )


def parse_config(raw: dict, seed: int | None = None, out: str | None = None, base_dir: Path = Path(".")) -> PipelineConfig:
    """Validate a raw JSON config completely; nothing is read or written here.

    ``seed`` and ``out`` override the config's ``seed`` and ``output_dir``.
    """
    _expect("config", raw, dict, "a JSON object")
    _check_keys("", raw, TOP_LEVEL)
    raw = copy.deepcopy(raw)
    if seed is not None:
        raw["seed"] = seed
    master = raw.get("seed", 0)
    _expect("seed", master, int, "an integer")
    if not 0 <= master <= MAX_SEED:
        raise ConfigError("seed", "must lie in [0, 2**64)")
    output_dir = Path(out if out is not None else _expect("output_dir", raw.get("output_dir", "out"), str, "a string"))
    seeds = {"master": master}

    # source
    source = raw.get("source")
    if not isinstance(source, dict) or len(source) != 1 or next(iter(source)) not in ("synthetic", "csv"):
        raise ConfigError("source", "must be an object with exactly one of 'synthetic' or 'csv'")
    synthetic = csv_src = None
    if "synthetic" in source:
        sd = _expect("source.synthetic", _section(source, "synthetic"), dict, "an object")
        _check_keys("source.synthetic", sd, _dataclass_keys(SyntheticSpec))
        if "seed" in sd:
            raise ConfigError("source.synthetic.seed", "set the top-level seed instead")
        if "split_fractions" in sd:
            raise ConfigError("source.synthetic.split_fractions", "set the top-level split_fractions instead")
        seeds["synthetic"] = derive_seed(master, "synthetic")
        synthetic = _build("source.synthetic", SyntheticSpec.from_dict, {**sd, "seed": seeds["synthetic"]})
        available = list(synthetic.attributes)
        categorical_names = set(available)
    else:
        sd = _expect("source.csv", _section(source, "csv"), dict, "an object")
        csv_src = _parse_csv_source(sd, base_dir)
        available = list(csv_src.sensitive_attrs)
        categorical_names = {c.name for c in csv_src.schema if c.is_categorical}

    sens = raw.get("sensitive_attrs", available)
    _expect("sensitive_attrs", sens, list, "a list")
    if not sens:
        raise ConfigError("sensitive_attrs", "must not be empty")
    bad = [a for a in sens if a not in categorical_names]
    if bad:
        raise ConfigError("sensitive_attrs", f"{bad} are not categorical columns of the source")

    # remap
    remap = None
    if raw.get("remap") is not None:
        rd = _expect("remap", raw["remap"], dict, "an object")
        if "preset" in rd:
            _check_keys("remap", rd, ("preset",))
            if rd["preset"] not in REMAP_PRESETS:
                raise ConfigError("remap.preset", f"choose from {sorted(REMAP_PRESETS)}")
            remap = REMAP_PRESETS[rd["preset"]]
        else:
            _check_keys("remap", rd, ("columns", "defaults", "label"))
            remap = _build("remap", RemapConfig.from_dict, rd)
        for col in set(remap.columns) | set(remap.defaults):
            if col not in categorical_names:
                raise ConfigError("remap.columns", f"{col!r} is not a categorical column of the source")

    partition = None
    if raw.get("partition") is not None:
        pd = _expect("partition", raw["partition"], dict, "an object")
        _check_keys("partition", pd, ("strategy", "n", "alpha", "min_partition_size"))
        seeds["partition"] = derive_seed(master, "partition")
        partition = _build("partition", PartitionConfig, **{**pd, "seed": seeds["partition"]})
        if partition.strategy == "natural_key":
            raise ConfigError("partition.strategy", "natural_key is implied by a csv source; use iid, dirichlet or linear")

    fr = raw.get("split_fractions", {"train": 0.8, "validation": 0.1, "test": 0.1})
    _expect("split_fractions", fr, dict, "an object")
    _check_keys("split_fractions", fr, ("train", "validation", "test"))
    split_fractions = _build("split_fractions", SplitFractions, **fr)
    seeds["split"] = derive_seed(master, "split")
    if synthetic is not None:
        synthetic.split_fractions = (split_fractions.train, split_fractions.validation, split_fractions.test)

    fa = _expect("fairness", raw.get("fairness", {}), dict, "an object")
    _check_keys("fairness", fa, ("metric", "level", "intersections"))
    metric, level = fa.get("metric", "DD"), fa.get("level", "attribute")
    if metric not in METRICS:
        raise ConfigError("fairness.metric", f"choose from {list(METRICS)}")
    if level not in LEVELS:
        raise ConfigError("fairness.level", f"choose from {list(LEVELS)}")
    inters = []
    for i, combo in enumerate(_expect("fairness.intersections", fa.get("intersections", []), list, "a list")):
        if not isinstance(combo, list) or len(combo) < 2 or any(a not in sens for a in combo):
            raise ConfigError(f"fairness.intersections[{i}]", "must list two or more sensitive attributes")
        inters.append(tuple(combo))

    mods = []
    for i, md in enumerate(_expect("modifications", raw.get("modifications", []), list, "a list")):
        fname = f"modifications[{i}]"
        _expect(fname, md, dict, "an object")
        _check_keys(fname, md, ("kind", "attr", "value", "fraction", "secondary", "splits", "seed", "client"))
        for req in ("kind", "attr", "value", "fraction"):
            if req not in md:
                raise ConfigError(f"{fname}.{req}", "required")
        if md["attr"] not in sens:
            raise ConfigError(f"{fname}.attr", f"{md['attr']!r} is not a sensitive attribute")
        md = {**md, "seed": md.get("seed", derive_seed(master, "modify", i))}
        mods.append(_build(fname, Modification.from_dict, md))
    if mods:
        seeds["modify"] = derive_seed(master, "modify")

    search = None
    if raw.get("threshold_search") is not None:
        td = _expect("threshold_search", raw["threshold_search"], dict, "an object")
        _check_keys("threshold_search", td, _dataclass_keys(ThresholdSearch))
        search = _build("threshold_search", ThresholdSearch, **td)
        seeds["exacerbate"] = derive_seed(master, "exacerbate")

    device = None
    if raw.get("device") is not None:
        dd = _expect("device", raw["device"], dict, "an object")
        _check_keys("device", dd, ("subsets", "test_client_fraction"))
        n = dd.get("subsets")
        if not isinstance(n, int) or isinstance(n, bool) or n < 2:
            raise ConfigError("device.subsets", "must be an integer >= 2")
        tcf = dd.get("test_client_fraction", 0.3)
        if not isinstance(tcf, (int, float)) or not 0 < tcf < 1:
            raise ConfigError("device.test_client_fraction", "must lie in (0, 1)")
        device = {"subsets": n, "test_client_fraction": float(tcf)}
        seeds["device"] = derive_seed(master, "device")

    md = _expect("models", raw.get("models", {"logistic": {}, "gbdt": {}}), dict, "an object")
    if not md:
        raise ConfigError("models", "must name at least one model")
    models = {}
    for kind, cfg in md.items():
        if kind not in TRAINERS:
            raise ConfigError(f"models.{kind}", f"unknown model; choose from {sorted(TRAINERS)}")
        _expect(f"models.{kind}", cfg, dict, "an object")
        _check_keys(f"models.{kind}", cfg, [k for k in _dataclass_keys(TrainConfig) if k != "seed"])
        models[kind] = _build(f"models.{kind}", TrainConfig, **{**cfg, "seed": derive_seed(master, "model", kind)})
    seeds["model"] = derive_seed(master, "model")
    if (search is not None or device is not None) and len(models) < 2:
        raise ConfigError("models", "the bias rule needs at least two models")

    fd = _expect("fl", raw.get("fl", {}), dict, "an object")
    _check_keys("fl", fd, [k for k in _dataclass_keys(FLConfig) if k != "seed"])
    seeds["fl"] = derive_seed(master, "fl")
    fl = _build("fl", FLConfig, **{**fd, "seed": seeds["fl"]})

    fair = None
    if raw.get("fair") is not None:
        fz = _expect("fair", raw["fair"], dict, "an object")
        _check_keys("fair", fz, _dataclass_keys(FairRegConfig))
        fair = _build("fair", FairRegConfig, **fz)
        if fair.target_attr not in sens:
            raise ConfigError("fair.target_attr", f"{fair.target_attr!r} is not a sensitive attribute")

    ev = _expect("evaluation", raw.get("evaluation", {}), dict, "an object")
    _check_keys("evaluation", ev, ("mode", "local_model"))
    mode = ev.get("mode", "auto")
    if mode not in EVAL_MODES:
        raise ConfigError("evaluation.mode", f"choose from {list(EVAL_MODES)}")
    local_model = ev.get("local_model", next(iter(models)))
    if local_model not in models:
        raise ConfigError("evaluation.local_model", f"{local_model!r} is not listed under models")

    return PipelineConfig(
        raw, master, output_dir, synthetic, csv_src, list(sens), remap, partition, split_fractions,
        metric, level, inters, mods, search, device, models, fl, fair, mode, local_model,
        str(raw.get("name", "")), seeds,
    )


def load_config(path: str, seed: int | None = None, out: str | None = None) -> PipelineConfig:
    """Read a config file, or a packaged recipe given as ``recipe:<name>``."""
    if path.startswith("recipe:"):
        name = path.split(":", 1)[1]
        if name not in RECIPES + DEMOS:
            raise ConfigError("config", f"unknown recipe {name!r}")
        return parse_config(load_recipe(name), seed, out, Path.cwd())
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError("config", f"cannot read {path}: {e.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError("config", f"invalid JSON at line {e.lineno}: {e.msg}") from None
    return parse_config(raw, seed, out, Path(path).resolve().parent)


# ---------------------------------------------------------------- commands


def _restrict_sensitive(fed: FederatedDataset, attrs) -> FederatedDataset:
    clients = {
        cid: SplitSet(*(s.part(p).replace(sensitive_attrs=tuple(attrs)) for p in ("train", "validation", "test")))
        for cid, s in fed.clients.items()
    }
    record = copy.deepcopy(fed.metadata)
    record.sensitive_attrs = list(attrs)
    return FederatedDataset(clients, record)


def _build_federation(cfg: PipelineConfig) -> FederatedDataset:
    from .ingest import generate_synthetic

    if cfg.synthetic is not None:
        fed = generate_synthetic(cfg.synthetic)
        # Synthetic clients are split at generation; re-split so the master seed governs it.
        fed = split_federation(fed, cfg.split_fractions, cfg.seeds["split"])
        if cfg.remap is not None:
            fed = _remap_federation(fed, cfg.remap)
    else:
        src = cfg.csv
        if src.task is not None:
            pooled = load_task_csv(src.path, src.task, src.states)
        else:
            pooled = load_csv(src.path, src.schema, src.sensitive_attrs or cfg.sensitive_attrs,
                              src.label_column, src.label_threshold, src.label_equals)
        if cfg.remap is not None:
            pooled = apply_remap(pooled, cfg.remap)
        pooled = pooled.replace(sensitive_attrs=tuple(cfg.sensitive_attrs))
        names = STATE_FIPS if src.key_column == "ST" else None
        fed = split_by_key(pooled, src.key_column, names)
        fed.metadata.base_task = src.task or "custom"
        fed.metadata.year, fed.metadata.horizon = src.year, src.horizon
        fed.metadata.source = "csv"
        if cfg.partition is None:
            fed = split_federation(fed, cfg.split_fractions, cfg.seeds["split"])
    if cfg.partition is not None:
        fed = subpartition_federation(fed, cfg.partition)
        fed = split_federation(fed, cfg.split_fractions, cfg.seeds["split"])
    fed = _restrict_sensitive(fed, cfg.sensitive_attrs)
    if cfg.remap is not None:
        fed.metadata.remap = cfg.remap.to_dict()
    return fed


def _remap_federation(fed: FederatedDataset, remap: RemapConfig) -> FederatedDataset:
    clients = {
        cid: SplitSet(*(apply_remap(s.part(p), remap) for p in ("train", "validation", "test")))
        for cid, s in fed.clients.items()
    }
    return FederatedDataset(clients, copy.deepcopy(fed.metadata))


def _true_label_reports(fed: FederatedDataset, cfg_attrs, metric: str, level: str) -> dict[str, FairnessReport]:
    out = {}
    for cid, split in fed.clients.items():
        try:
            out[cid] = fairness_table(split.combined(), cfg_attrs, metric, level)
        except MetricUndefined as e:
            log.warning("client %s: %s", cid, e)
    return out


def _reports_csv(reports: dict[str, FairnessReport]) -> str:
    lines = []
    for i, (cid, r) in enumerate(reports.items()):
        body = r.to_csv().splitlines()
        if i == 0:
            lines.append("client," + body[0])
        lines += [f"{cid},{row}" for row in body[1:]]
    return "\n".join(lines) + ("\n" if lines else "")


def _write_reports(reports: dict[str, FairnessReport], stem: Path, extra: dict | None = None) -> None:
    payload = {cid: {**r.to_dict(), **((extra or {}).get(cid, {}))} for cid, r in reports.items()}
    dump_json(payload, stem.with_suffix(".json"))
    stem.with_suffix(".csv").write_text(_reports_csv(reports), encoding="utf-8")


def _write_bias_map(reports, attrs, labels, path: Path, title: str) -> None:
    names = [a if isinstance(a, str) else "&".join(a) for a in attrs]
    if reports:
        path.write_text(render_bias_map(reports, names, labels, title), encoding="utf-8")


def _known_labels(record) -> dict:
    labels = {}
    if record.threshold_rule:
        for cid, o in record.threshold_rule.get("outcomes", {}).items():
            labels[cid] = o.get("label")
    if record.device:
        labels.update(record.device.get("labels", {}))
    return {c: (tuple(v) if isinstance(v, list) else v) for c, v in labels.items()}


def _datasheet_reports(fed: FederatedDataset, record) -> dict[str, FairnessReport]:
    attrs = list(record.sensitive_attrs)
    return _true_label_reports(fed, attrs, "DD", "value")


def cmd_generate(cfg: PipelineConfig) -> Path:
    """Build the federation, write it with metadata, true-label fairness tables, a bias map and the datasheet."""
    fed = _build_federation(cfg)
    if cfg.modifications:
        fed = apply_modifications(fed, cfg.modifications)
    trainers = cfg.trainers() if (cfg.threshold_search or cfg.device) else None
    if cfg.threshold_search is not None:
        fed = bias_clients(fed, trainers, cfg.sensitive_attrs, cfg.threshold_search, cfg.seeds["exacerbate"])
    if cfg.device is not None:
        search = cfg.threshold_search or ThresholdSearch(level="value" if cfg.level != "attribute" else "attribute")
        fed = device_from_silo(
            fed, cfg.device["subsets"], trainers, cfg.sensitive_attrs, search,
            cfg.split_fractions, cfg.device["test_client_fraction"], cfg.seeds["device"],
        )
    record = fed.metadata
    record.seed = cfg.seed
    record.seeds = {**record.seeds, **cfg.seeds}
    record.fl = {**cfg.fl.to_dict(), "fair": cfg.fair.to_dict() if cfg.fair else None}
    record.config = cfg.raw
    record.library_version = __version__
    if record.threshold_rule is None:
        record.threshold_rule = {"threshold": 0.09, "rule": "not applied"}

    out = cfg.output_dir
    write_federation(fed, out)
    fdir = out / "fairness"
    fdir.mkdir(exist_ok=True)
    reports = _true_label_reports(fed, cfg.fairness_attrs, cfg.metric, cfg.level)
    _write_reports(reports, fdir / "true_labels")
    _write_bias_map(reports, cfg.sensitive_attrs, _known_labels(record), fdir / "bias_map.svg", "True-label disparity per client")
    (out / "datasheet.md").write_text(generate_datasheet(record, _datasheet_reports(fed, record)), encoding="utf-8")
    return out


def cmd_datasheet(cfg: PipelineConfig, data_dir: Path | None = None) -> Path:
    data_dir = Path(data_dir or cfg.output_dir)
    fed = read_federation(data_dir)
    path = data_dir / "datasheet.md"
    path.write_text(generate_datasheet(fed.metadata, _datasheet_reports(fed, fed.metadata)), encoding="utf-8")
    return path


def _mode(cfg: PipelineConfig, record) -> str:
    if cfg.eval_mode != "auto":
        return cfg.eval_mode
    return "cross_device" if record.device else "cross_silo"


def _train_local(fed: FederatedDataset, kind: str, config: TrainConfig, ids) -> dict:
    fn = trainer(kind, config)
    models = {}
    for cid in ids:
        try:
            models[cid] = fn(fed[cid])
        except TrainingError as e:
            log.warning("client %s: no local %s model: %s", cid, kind, e)
    return models


def cmd_evaluate(cfg: PipelineConfig, data_dir: Path | None = None) -> Path:
    """True-label and local-model fairness tables per client, bias labels, statistics and bias maps."""
    data_dir = Path(data_dir or cfg.output_dir)
    fed = read_federation(data_dir)
    mode = _mode(cfg, fed.metadata)
    out = data_dir / "evaluation"
    out.mkdir(exist_ok=True)
    attrs = cfg.fairness_attrs
    truth = _true_label_reports(fed, attrs, cfg.metric, cfg.level)
    _write_reports(truth, out / "true_labels")
    _write_bias_map(truth, cfg.sensitive_attrs, {}, out / "bias_map_true_labels.svg", "True-label disparity per client")

    per_model, local_models = {}, {}
    for kind, tc in cfg.models.items():
        models = _train_local(fed, kind, tc, fed.client_ids)
        local_models[kind] = models
        evals = evaluate_models(models, fed, attrs, mode, cfg.metric, cfg.level, model_id=kind)
        per_model[kind] = {cid: e.report for cid, e in evals.items()}
        _write_reports(per_model[kind], out / kind, {cid: {"accuracy": e.accuracy, "n_rows": e.n_rows} for cid, e in evals.items()})
    labels = {}
    if len(per_model) >= 2:
        rule_level = "attribute" if cfg.level == "attribute" else "value"
        common = set.intersection(*(set(r) for r in per_model.values()))
        for cid in fed.client_ids:
            if cid in common:
                labels[cid] = bias_label([per_model[k][cid] for k in per_model], 0.09, rule_level)
        dump_json({cid: (list(v) if isinstance(v, tuple) else v) for cid, v in labels.items()}, out / "bias_labels.json")
    for kind, reports in per_model.items():
        _write_bias_map(reports, cfg.sensitive_attrs, labels, out / f"bias_map_{kind}.svg", f"{kind} model disparity per client")
    stats = client_stats(fed, local_models[cfg.local_model], cfg.sensitive_attrs)
    (out / "client_stats.csv").write_text(rows_to_csv(stats, client_stats_columns(cfg.sensitive_attrs)), encoding="utf-8")
    return out


def cmd_simulate(cfg: PipelineConfig, data_dir: Path | None = None) -> Path:
    """FedAvg (and, if configured, fairness-regularized FedAvg) with local-vs-global comparison reports."""
    data_dir = Path(data_dir or cfg.output_dir)
    fed = read_federation(data_dir)
    record = fed.metadata
    mode = _mode(cfg, record)
    out = data_dir / "simulation"
    out.mkdir(exist_ok=True)
    if mode == "cross_device":
        if not record.device:
            raise SchemaError("cross_device simulation needs a device federation (metadata.device)")
        train_ids, eval_ids = record.device["train_clients"], record.device["test_clients"]
    else:
        train_ids, eval_ids = fed.client_ids, fed.client_ids
    attrs = cfg.fairness_attrs

    local = _train_local(fed, cfg.local_model, cfg.models[cfg.local_model], eval_ids)
    local_evals = evaluate_models(local, fed, attrs, mode, cfg.metric, "value", model_id=cfg.local_model)
    labels = _known_labels(record)

    arms = [("fedavg", None)]
    if cfg.fair is not None:
        arms.append(("fair", cfg.fair))
    for name, fair in arms:
        if fair is None:
            model, history = run_fedavg(fed, cfg.fl, train_ids)
        else:
            model, history = run_fair_fedavg(fed, cfg.fl, fair, train_ids)
        (out / f"history_{name}.csv").write_text(history.to_csv(), encoding="utf-8")
        dump_json(history.to_dict(), out / f"history_{name}.json")
        dump_json(model.to_dict(), out / f"model_{name}.json")
        glob = evaluate_global(model, fed, attrs, mode, eval_ids if mode == "cross_device" else None,
                               cfg.metric, "value", model_id=name)
        ids = [c for c in eval_ids if c in local_evals and c in glob]
        report = compare(
            {c: local_evals[c].report for c in ids},
            {c: glob[c].report for c in ids},
            {c: (local_evals[c].accuracy, glob[c].accuracy) for c in ids},
            {c: labels.get(c) for c in ids},
        )
        dump_json(report.to_dict(), out / f"report_{name}.json")
        (out / f"report_{name}.csv").write_text(report.to_csv(), encoding="utf-8")
        for kind in ("scatter", "bars", "value_shift"):
            emit_svg(report, kind, out / f"{kind}_{name}.svg", f"{name}: local vs global {cfg.metric}")
    return out


COMMANDS = {"generate": cmd_generate, "evaluate": cmd_evaluate, "simulate": cmd_simulate, "datasheet": cmd_datasheet}


def _seed_arg(s: str) -> int:
    try:
        v = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {s!r}") from None
    if not 0 <= v <= MAX_SEED:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedfair", description="Build and study fairness-heterogeneous federated datasets.")
    p.add_argument("--version", action="version", version=f"fedfair {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=(fn.__doc__ or "").strip().splitlines()[0] if fn.__doc__ else None)
        sp.add_argument("--config", required=True, help="JSON config file, or recipe:<name> for a packaged recipe")
        sp.add_argument("--out", help="output directory (overrides output_dir)")
        sp.add_argument("--seed", type=_seed_arg, help="master seed (overrides seed)")
    return p


def main(argv=None) -> int:
    level = getattr(logging, os.environ.get("FEDFAIR_LOG_LEVEL", "WARNING").upper(), None)
    logging.basicConfig(
        level=level if isinstance(level, int) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed, args.out)
        result = COMMANDS[args.command](cfg)
    except ConfigError as e:
        print(f"fedfair: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (IngestError, SchemaError, PartitionError, MetricUndefined, OSError) as e:
        print(f"fedfair: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, FedFairError, ArithmeticError) as e:
        print(f"fedfair: runtime failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    print(result)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
