"""Command-line entry point: ``hct ingest|train|cv|diagnose``.

Settings come from a flat ``key = value`` config file (``--config``) with
command-line flags taking precedence. Every run directory gets a
``manifest.json`` echoing the resolved config, the seed and a content hash of
the inputs, so a run can be repeated exactly.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from hct.checkpoint import load_checkpoint, save_checkpoint
from hct.dataio import (
    SEGMENT_LENGTH,
    STAGES,
    collect_segments,
    discover_walk_files,
    load_corpus,
    load_labels,
    read_walk,
)
from hct.errors import ConfigError, ContractError, HctError
from hct.evaluation import CV_TASKS, cross_validate, diagnose_walk
from hct.model import HctConfig, default_config
from hct.numerics.kernels import BACKEND
from hct.trainer import TrainConfig, train

log = logging.getLogger("hct")

LABEL_CANDIDATES = ("labels.csv", "labels.tsv", "demographics.txt", "demographics.csv")
_RUN_KEYS = {"data_dir", "labels", "task", "out", "seed", "folds", "jobs", "overwrite"}
_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)} - {"seed"}
_MODEL_KEYS = {f.name for f in dataclasses.fields(HctConfig)} - {"task", "dropout"}


@dataclass
class RunConfig:
    data_dir: Optional[str] = None
    labels: Optional[str] = None
    task: str = "detection"
    out: Optional[str] = None
    seed: Optional[int] = None
    folds: int = 10
    jobs: Optional[int] = None
    overwrite: bool = False
    train: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self.seed if self.seed is not None else 0, **self.train)

    def model_config(self, task=None) -> HctConfig:
        return default_config(task or self.task, **self.model)

    def require_seed(self):
        if self.seed is None:
            raise ConfigError("a seed is required (--seed or 'seed' in the config file)")

    def dataset_dir(self) -> Path:
        path = self.data_dir or os.environ.get("HCT_DATA_DIR")
        if not path:
            raise ConfigError("no dataset directory: pass --data, set data_dir, or set HCT_DATA_DIR")
        path = Path(path)
        if not path.is_dir():
            raise ConfigError(f"dataset directory {path} does not exist")
        return path

    def label_table(self, required: bool) -> Optional[Path]:
        if self.labels:
            path = Path(self.labels)
            if not path.is_file():
                raise ConfigError(f"label table {path} not found")
            return path
        for name in LABEL_CANDIDATES:
            path = self.dataset_dir() / name
            if path.is_file():
                return path
        if required:
            raise ConfigError(f"no label table given and none of {LABEL_CANDIDATES} in {self.dataset_dir()}")
        return None

    def to_dict(self):
        d = dataclasses.asdict(self)
        d.pop("overwrite")
        return d


def _coerce(key, raw, target):
    raw = raw.strip()
    kind = type(target) if target is not None else str
    try:
        if kind is bool:
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if kind is tuple:
            return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
        if kind in (int, float):
            return kind(raw)
        return raw
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {kind.__name__}") from None


_TRAIN_DEFAULTS = TrainConfig()
_MODEL_DEFAULTS = HctConfig()
_RUN_TYPES = {"seed": 0, "folds": 0, "jobs": 0, "overwrite": False}


def apply_settings(run: RunConfig, settings: dict) -> RunConfig:
    """Merge flat ``key -> text`` settings into ``run``."""
    for key, raw in settings.items():
        key = key.strip().lower()
        if key in _RUN_KEYS:
            setattr(run, key, _coerce(key, raw, _RUN_TYPES.get(key)))
        elif key in _TRAIN_KEYS:
            default = getattr(_TRAIN_DEFAULTS, key)
            run.train[key] = _coerce(key, raw, 0.0 if default is None else default)
        elif key in _MODEL_KEYS:
            run.model[key] = _coerce(key, raw, getattr(_MODEL_DEFAULTS, key))
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return run


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=", ":"))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + path.read_text())
    except configparser.Error as exc:
        raise ConfigError(f"config file {path}: {exc}") from None
    return dict(parser["run"])


def resolve(args) -> RunConfig:
    run = RunConfig()
    if args.config:
        apply_settings(run, read_config_file(args.config))
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        apply_settings(run, {key: raw})
    for key in ("data_dir", "labels", "task", "out", "seed", "folds", "jobs"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(run, key, val)
    if getattr(args, "overwrite", False):
        run.overwrite = True
    return run


# -- helpers -------------------------------------------------------------------

def input_digest(paths) -> str:
    h = hashlib.sha256()
    for path in sorted(Path(p) for p in paths):
        h.update(path.name.encode() + b"\0")
        h.update(path.read_bytes())
        h.update(b"\0")
    return h.hexdigest()


def write_manifest(out: Path, command: str, run: RunConfig, inputs, extra=None):
    doc = {
        "command": command,
        "config": run.to_dict(),
        "seed": run.seed,
        "inputs_sha256": input_digest(inputs),
        "inputs": sorted(Path(p).name for p in inputs),
        "kernels": BACKEND,
    }
    if extra:
        doc.update(extra)
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _prepare_out(run: RunConfig, default: str) -> Path:
    out = Path(run.out or default)
    if (out / "manifest.json").exists() and not run.overwrite:
        raise ConfigError(f"{out} already holds a run; pass --overwrite to replace it")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(run: RunConfig, labels_required=True):
    data = run.dataset_dir()
    table = run.label_table(labels_required)
    labels = load_labels(table) if table else None
    walks, problems = load_corpus(data, labels)
    if not walks:
        raise ContractError(f"no parsable walks in {data}")
    inputs = discover_walk_files(data) + ([table] if table else [])
    return walks, problems, inputs


def _emit(doc):
    print(json.dumps(doc, indent=2, sort_keys=True))


# -- commands --------------------------------------------------------------------

def cmd_ingest(run: RunConfig) -> dict:
    walks, problems, _ = _load(run, labels_required=False)
    classes = {"healthy": [], "PD": []}
    classes.update({f"H&Y {s:g}": [] for s in STAGES})
    for w in walks:
        classes["PD" if w.label.is_pd else "healthy"].append(w)
        if w.label.stageable:
            classes[f"H&Y {w.label.hy_stage:g}"].append(w)
    summary = {"walks": len(walks), "subjects": len({w.subject_id for w in walks}),
               "segments": sum(w.length // SEGMENT_LENGTH for w in walks), "classes": {},
               "skipped": [{"file": name, "reason": msg} for name, msg in problems]}
    for name, members in classes.items():
        summary["classes"][name] = {
            "walks": len(members),
            "subjects": len({w.subject_id for w in members}),
            "segments": sum(w.length // SEGMENT_LENGTH for w in members),
        }
    if run.out:
        out = Path(run.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def cmd_train(run: RunConfig) -> dict:
    run.require_seed()
    if run.task not in ("detection", "staging"):
        raise ConfigError(f"train task must be detection or staging, got {run.task!r}")
    tc, mc = run.train_config(), run.model_config()
    walks, _, inputs = _load(run)
    data = collect_segments(walks, run.task, mc.segment_length)
    if run.task == "staging" and len(data) == 0:
        raise ContractError("no PD walks with a usable H&Y stage to train the staging model")
    out = _prepare_out(run, f"runs/train-{run.task}-seed{run.seed}")
    params, history = train(data, tc, mc)
    save_checkpoint(params, out / "model.hct")
    (out / "history.csv").write_text(history.to_csv())
    write_manifest(out, "train", run, inputs, {
        "best_epoch": history.best_epoch, "stopped_epoch": history.stopped_epoch,
        "validation_subjects": history.validation_subjects})
    return {"checkpoint": str(out / "model.hct"), "best_epoch": history.best_epoch,
            "stopped_epoch": history.stopped_epoch,
            "val_loss": history.val_loss[history.best_epoch - 1] if history.best_epoch else None}


def cmd_cv(run: RunConfig) -> dict:
    run.require_seed()
    if run.task not in CV_TASKS:
        raise ConfigError(f"cv task must be one of {CV_TASKS}, got {run.task!r}")
    mc = run.model_config("detection")
    tc = run.train_config()
    out = _prepare_out(run, f"runs/cv-{run.task}-seed{run.seed}")
    walks, _, inputs = _load(run)
    jobs = run.jobs or max(1, min(run.folds, os.cpu_count() or 1))
    result = cross_validate(walks, run.folds, tc, mc, run.task, run.seed, jobs)
    (out / "report.json").write_text(result.to_json())
    for view in result.views:
        (out / f"folds_{view}.csv").write_text(result.fold_table(view))
        pooled = None
        for f in result.folds:
            counts = f.counts[view]
            (out / f"confusion_{view}_fold{f.fold}.csv").write_text(counts.to_csv())
            pooled = counts if pooled is None else pooled + counts
        (out / f"confusion_{view}.csv").write_text(pooled.to_csv())
    for f in result.folds:
        for part, history in f.histories.items():
            (out / f"history_{part}_fold{f.fold}.csv").write_text(history.to_csv())
    write_manifest(out, "cv", run, inputs, {"jobs": jobs})
    view = result.task
    agg = result.aggregate(view)
    return {"report": str(out / "report.json"), "task": view,
            "accuracy_mean": agg["accuracy"]["mean"], "accuracy_sd": agg["accuracy"]["sd"]}


def cmd_diagnose(run: RunConfig, binary_ckpt, staging_ckpt, walk_file) -> dict:
    binary = load_checkpoint(binary_ckpt, expected_task="detection")
    staging = load_checkpoint(staging_ckpt, expected_task="staging")
    walk = read_walk(walk_file)
    if walk.length < binary.config.segment_length:
        raise ContractError(f"no segments: walk has {walk.length} samples, "
                            f"needs at least {binary.config.segment_length}")
    result = diagnose_walk(walk, binary, staging)
    record = {"walk": walk.key, "diagnosis": result.label,
              "detection": {"votes": dict(zip(("healthy", "PD"), result.detection.tally)),
                            "scores": dict(zip(("healthy", "PD"), result.detection.scores)),
                            "segments": result.detection.segments}}
    if result.staging is not None:
        names = [f"{s:g}" for s in STAGES]
        record["staging"] = {"votes": dict(zip(names, result.staging.tally)),
                             "scores": dict(zip(names, result.staging.scores))}
    else:
        record["staging"] = None
    if run.out:
        out = Path(run.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"diagnosis_{walk.key}.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
        write_manifest(out, "diagnose", run, [binary_ckpt, staging_ckpt, walk_file])
    return record


# -- argument parsing ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hct", description="Gait-based PD detection and staging.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, task_choices=None):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--seed", type=int)
        p.add_argument("--data", dest="data_dir", help="dataset directory (default: $HCT_DATA_DIR)")
        p.add_argument("--labels", help="subject label table")
        p.add_argument("--out", help="output directory")
        if task_choices:
            p.add_argument("--task", choices=task_choices)

    common(sub.add_parser("ingest", help="summarize a dataset directory"))
    common(sub.add_parser("train", help="train one model"), ("detection", "staging"))
    cv = sub.add_parser("cv", help="subject-level k-fold cross-validation")
    common(cv, CV_TASKS)
    cv.add_argument("--folds", type=int)
    cv.add_argument("--jobs", type=int, help="folds trained in parallel")
    cv.add_argument("--overwrite", action="store_true")
    for name in ("train",):
        sub.choices[name].add_argument("--overwrite", action="store_true")
    diag = sub.add_parser("diagnose", help="two-step diagnosis of one walk file")
    common(diag)
    diag.add_argument("--binary", required=True, help="detection checkpoint")
    diag.add_argument("--staging", required=True, help="staging checkpoint")
    diag.add_argument("walk", help="walk file to diagnose")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        run = resolve(args)
        if args.command == "ingest":
            result = cmd_ingest(run)
        elif args.command == "train":
            result = cmd_train(run)
        elif args.command == "cv":
            result = cmd_cv(run)
        else:
            result = cmd_diagnose(run, args.binary, args.staging, args.walk)
    except HctError as exc:
        print(f"hct: error[{exc.category}]: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"hct: error[io]: {exc}", file=sys.stderr)
        return 2
    _emit(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
