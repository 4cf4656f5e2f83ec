"""Cross-validated experiments and result tables.

A run writes into its output directory:

``config.json``            fully resolved configuration (re-runnable)
``folds.csv``              per-fold metrics
``metrics.md/.csv``        mean±std table
``report.json``            summary read by :func:`compare`
``fold<k>/``               chain plan, stage checkpoints, traces, training logs (MCC)
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import baselines
from .cell import save_params
from .dataset import (KNOWN_SCHEMAS, ModalitySchema, MultiModalDataset, Standardizer,
                      apply_partition, load_dataset, make_folds)
from .inference import cost_average, predict_chain, write_traces
from .metrics import cv_aggregate, evaluate, folds_csv, markdown_table, report_csv, MetricReport
from .training import TrainConfig, train_mcc

ALGORITHMS = ("mcc", "br", "cc", "ecc")


class ConfigError(ValueError):
    """Unusable experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    data: str
    algo: str = "mcc"
    schema: str | None = None
    format: str | None = None
    folds: int = 10
    seed: int = 7
    out: str = "runs/latest"
    workers: int = 1
    data_dir: str | None = None
    ecc_chains: int = 10
    baseline_l2: float = 1e-3
    baseline_epochs: int = 500
    include_history_cost: bool = True
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.algo not in ALGORITHMS:
            raise ConfigError(f"algo must be one of {ALGORITHMS}, got {self.algo!r}")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"] = self.train.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        train = d.pop("train", {}) or {}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known - {"resolved"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        tknown = {f.name for f in fields(TrainConfig)}
        if set(train) - tknown:
            raise ConfigError(f"unknown train keys: {sorted(set(train) - tknown)}")
        d.pop("resolved", None)
        try:
            return cls(train=TrainConfig(**train), **d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def resolve_dataset(cfg: ExperimentConfig):
    """Load the configured dataset; returns ``(dataset, provenance dict)``.

    ``data`` is either a file path or a known dataset name (looked up as
    ``<data_dir>/<name>.arff`` with ``data_dir`` defaulting to
    ``$MCC_DATA_DIR`` or ``./data``). Named datasets are re-blocked into their
    published modality sizes by information gain.
    """
    name = cfg.data.lower()
    if name in KNOWN_SCHEMAS and not Path(cfg.data).exists():
        known = KNOWN_SCHEMAS[name]
        root = Path(cfg.data_dir or os.environ.get("MCC_DATA_DIR", "data"))
        candidates = [root / f"{name}{ext}" for ext in (".arff", ".arff.gz", ".csv")]
        path = next((p for p in candidates if p.exists()), None)
        if path is None:
            raise ConfigError(f"dataset {name!r} not found; looked for "
                              + ", ".join(str(p) for p in candidates))
        n_features = sum(known["dims"])
        spec = cfg.schema or {"dims": [n_features], "labels": known["labels"]}
        raw = load_dataset(path, cfg.format, spec)
        if raw.X.shape[1] != n_features or raw.n_labels != known["labels"]:
            raise ConfigError(f"{path} has {raw.X.shape[1]} features / {raw.n_labels} labels, "
                              f"expected {n_features} / {known['labels']}")
        data = apply_partition(raw, known["dims"])
        if raw.n_instances != known["n"]:
            raise ConfigError(f"{path} has {raw.n_instances} instances, expected {known['n']}")
    else:
        path = Path(cfg.data)
        if not path.exists():
            raise ConfigError(f"data file {path} does not exist")
        data = load_dataset(path, cfg.format, cfg.schema)
    provenance = {"path": str(path), "sha256": _sha256(path),
                  "n_instances": data.n_instances, "n_labels": data.n_labels,
                  "schema": data.schema.to_dict()}
    return data, provenance


def _history_info(n_base: int, history_cost: float):
    def info(trace):
        return None if trace.stage == 0 else (n_base, history_cost)
    return info


def run_fold(cfg: ExperimentConfig, data: MultiModalDataset, fold: int, out: Path | None):
    """Train and evaluate one fold; returns its metric dictionary."""
    split = make_folds(data.n_instances, cfg.folds, cfg.seed)
    train = data.subset(split.train_index(fold))
    test = data.subset(split.test_index(fold))
    scaler = Standardizer.fit(train.X)
    train, test = scaler.transform(train), scaler.transform(test)
    fold_dir = None
    if out is not None:
        fold_dir = out / f"fold{fold}"
        fold_dir.mkdir(parents=True, exist_ok=True)

    if cfg.algo == "mcc":
        tcfg = replace(cfg.train, seed=cfg.train.seed + 1000 * fold + cfg.seed)
        model = train_mcc(train, tcfg)
        pred = predict_chain(model.stages, model.plan, test, tcfg)
        cost = cost_average(pred.traces, cfg.include_history_cost,
                            _history_info(data.schema.n_modalities, tcfg.history_cost))
        if fold_dir is not None:
            (fold_dir / "plan.json").write_text(json.dumps(model.plan.to_dict(), indent=2) + "\n")
            write_traces(pred.traces, fold_dir / "traces.csv")
            for stage in model.stages:
                save_params(fold_dir / f"stage{stage.stage}.npz", stage.params, stage=stage.stage,
                            dims=list(stage.schema.dims), costs=list(stage.schema.costs))
                write_training_log(stage.log, fold_dir / f"train_log_stage{stage.stage}.csv")
        Z = pred.Z
    else:
        kw = dict(l2=cfg.baseline_l2, epochs=cfg.baseline_epochs)
        if cfg.algo == "br":
            model = baselines.train_br(train, **kw)
        elif cfg.algo == "cc":
            model = baselines.train_cc(train, **kw)
        else:
            model = baselines.train_ecc(train, cfg.ecc_chains, cfg.seed + fold, **kw)
        Z = model.predict(test.X)
        cost = baselines.baseline_cost(data)
    return evaluate(Z, test.Y, cost)


def write_training_log(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_loss", "mean_modalities", "mean_confidence"])
        for r in rows:
            w.writerow([r["epoch"], repr(r["mean_loss"]), repr(r["mean_modalities"]),
                        repr(r["mean_confidence"])])


def run_experiment(cfg: ExperimentConfig, data: MultiModalDataset | None = None):
    """k-fold CV of ``cfg.algo``; writes artifacts to ``cfg.out`` and returns ``(report, folds)``."""
    provenance = None
    if data is None:
        data, provenance = resolve_dataset(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = cfg.to_dict() | {"resolved": provenance}
    (out / "config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")

    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(run_fold, cfg, data, k, out) for k in range(cfg.folds)]
            per_fold = [f.result() for f in futures]
    else:
        per_fold = [run_fold(cfg, data, k, out) for k in range(cfg.folds)]

    report = cv_aggregate(per_fold)
    label = cfg.algo.upper()
    (out / "folds.csv").write_text(folds_csv(per_fold))
    (out / "metrics.md").write_text(markdown_table({label: report}))
    (out / "metrics.csv").write_text(report_csv({label: report}))
    (out / "report.json").write_text(json.dumps(
        {"algorithm": label, "data": cfg.data, **report.to_dict()}, indent=2, sort_keys=True) + "\n")
    return report, per_fold


def load_report(run_dir) -> tuple[str, MetricReport]:
    d = json.loads((Path(run_dir) / "report.json").read_text())
    n = d.pop("n_folds")
    name = d.pop("algorithm")
    d.pop("data", None)
    return name, MetricReport({k: (v["mean"], v["std"]) for k, v in d.items()}, n)


def compare(run_dirs) -> str:
    """Merge finished runs into one markdown table, bolding the best value per column."""
    run_dirs = [Path(p) for p in run_dirs]
    if not run_dirs:
        raise ValueError("compare needs at least one run directory")
    missing = [str(p / "report.json") for p in run_dirs if not (p / "report.json").exists()]
    if missing:
        raise FileNotFoundError("missing run artifacts: " + ", ".join(missing))
    reports = {}
    for p in run_dirs:
        name, rep = load_report(p)
        key = name
        n = 2
        while key in reports:
            key = f"{name} ({n})"
            n += 1
        reports[key] = rep
    return markdown_table(reports)
