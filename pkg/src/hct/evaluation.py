"""Walk-level voting, two-step diagnosis, metrics and subject-level cross-validation."""
from __future__ import annotations

import dataclasses
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from hct.dataio import (
    SEGMENT_LENGTH,
    WalkRecord,
    build_dataset,
    make_folds,
    normalize_walk,
    walk_segments_array,
)
from hct.errors import ConfigError, ContractError, TaskMismatchError
from hct.model import HctConfig, HctParams, default_config, predict_proba
from hct.trainer import TrainConfig, train

log = logging.getLogger(__name__)

DIAGNOSES = ("healthy", "2", "2.5", "3")
CV_TASKS = ("detection", "staging", "two_step")


# -- voting ----------------------------------------------------------------------

def majority_vote(votes, n_classes: int) -> int:
    """Modal class of ``votes``; ties go to the higher (more severe) class index."""
    votes = np.asarray(votes, dtype=np.int64)
    if votes.size == 0:
        raise ContractError("no votes to count")
    tally = np.bincount(votes, minlength=n_classes)
    return int(np.flatnonzero(tally == tally.max())[-1])


def _segments(walk_segments, n=SEGMENT_LENGTH):
    if isinstance(walk_segments, WalkRecord):
        walk = walk_segments if walk_segments.normalized else normalize_walk(walk_segments)
        return walk_segments_array(walk, n)
    if isinstance(walk_segments, np.ndarray):
        return walk_segments
    segs = list(walk_segments)
    if not segs:
        return np.zeros((0, 18, n), np.float32)
    return np.stack([getattr(s, "data", s) for s in segs])


@dataclass
class WalkVote:
    """Outcome of classifying every segment of one walk."""

    label: int
    tally: list  # votes per class
    scores: list  # mean class probabilities over segments
    segments: int


def vote_walk(walk_segments, params: HctParams) -> WalkVote:
    x = _segments(walk_segments, params.config.segment_length)
    if len(x) == 0:
        raise ContractError("no segments")
    prob = predict_proba(params, x)
    if params.config.output_units == 1:
        classes = (prob >= 0.5).astype(np.int64)
        scores = [float(1 - prob.mean()), float(prob.mean())]
        n = 2
    else:
        classes = prob.argmax(axis=1)
        scores = [float(v) for v in prob.mean(axis=0)]
        n = params.config.output_units
    tally = np.bincount(classes, minlength=n)
    return WalkVote(majority_vote(classes, n), [int(t) for t in tally], scores, len(x))


def predict_walk(walk_segments, params: HctParams, task: Optional[str] = None) -> int:
    """Walk class by majority vote: 0/1 (healthy/PD) or 0/1/2 (stage 2/2.5/3).

    ``walk_segments`` is a list of segment sets, an ``[S, 18, n]`` array or a
    walk record. A given ``task`` must match the model.
    """
    if task is not None and default_config(task).task != params.config.task:
        raise TaskMismatchError(f"{params.config.task} model used for task {task!r}")
    return vote_walk(walk_segments, params).label


# -- two-step diagnosis ----------------------------------------------------------------

@dataclass
class Diagnosis:
    label: str  # one of DIAGNOSES
    detection: WalkVote
    staging: Optional[WalkVote] = None

    def to_dict(self):
        return dataclasses.asdict(self)


def check_pair(binary: HctParams, staging: HctParams):
    if binary.config.task != "two_class":
        raise TaskMismatchError(f"detection slot holds a {binary.config.task} model")
    if staging.config.task != "multi_class":
        raise TaskMismatchError(f"staging slot holds a {staging.config.task} model")
    for key in ("segment_length", "sensors"):
        if getattr(binary.config, key) != getattr(staging.config, key):
            raise ContractError(f"models disagree on {key}: "
                                f"{getattr(binary.config, key)} vs {getattr(staging.config, key)}")


def diagnose_walk(walk, binary: HctParams, staging: HctParams) -> Diagnosis:
    """Detection first; the staging model only sees walks voted PD."""
    check_pair(binary, staging)
    x = _segments(walk, binary.config.segment_length)
    detection = vote_walk(x, binary)
    if detection.label == 0:
        return Diagnosis("healthy", detection)
    stage = vote_walk(x, staging)
    return Diagnosis(DIAGNOSES[1 + stage.label], detection, stage)


def two_step_diagnose(walk, binary_params: HctParams, staging_params: HctParams) -> str:
    return diagnose_walk(walk, binary_params, staging_params).label


# -- metrics ---------------------------------------------------------------------

@dataclass
class ConfusionCounts:
    """Counts indexed ``[true, predicted]``."""

    matrix: np.ndarray
    labels: tuple

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.int64)
        n = len(self.labels)
        if self.matrix.shape != (n, n):
            raise ContractError(f"confusion matrix {self.matrix.shape} does not match {n} labels")
        if np.any(self.matrix < 0):
            raise ContractError("negative confusion count")

    @classmethod
    def from_pairs(cls, true, pred, labels):
        n = len(labels)
        matrix = np.zeros((n, n), np.int64)
        np.add.at(matrix, (np.asarray(true, np.int64), np.asarray(pred, np.int64)), 1)
        return cls(matrix, tuple(labels))

    @property
    def total(self) -> int:
        return int(self.matrix.sum())

    def __add__(self, other):
        if self.labels != other.labels:
            raise ContractError("cannot add confusion counts over different labels")
        return ConfusionCounts(self.matrix + other.matrix, self.labels)

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("true\\pred," + ",".join(self.labels) + "\n")
        for label, row in zip(self.labels, self.matrix):
            out.write(label + "," + ",".join(str(int(v)) for v in row) + "\n")
        return out.getvalue()


@dataclass
class MetricsReport:
    """Rates in [0, 1]. Binary reports treat class index 1 as positive.

    A rate whose denominator is zero is reported as 0 and named in ``flags``.
    """

    labels: tuple
    total: int
    accuracy: float
    precision: dict
    recall: dict
    f1: dict
    macro_precision: float
    macro_recall: float
    macro_f1: float
    sensitivity: Optional[float] = None
    specificity: Optional[float] = None
    flags: list = field(default_factory=list)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["labels"] = list(self.labels)
        return d


def _ratio(num, den, name, flags):
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def compute_metrics(counts: ConfusionCounts) -> MetricsReport:
    m = counts.matrix
    total = counts.total
    if total == 0:
        raise ContractError("cannot compute metrics of an empty confusion matrix")
    flags = []
    precision, recall, f1 = {}, {}, {}
    for i, label in enumerate(counts.labels):
        tp = int(m[i, i])
        pr = _ratio(tp, int(m[:, i].sum()), f"precision[{label}]", flags)
        re = _ratio(tp, int(m[i, :].sum()), f"recall[{label}]", flags)
        precision[label], recall[label] = pr, re
        f1[label] = _ratio(2 * pr * re, pr + re, f"f1[{label}]", flags)
    n = len(counts.labels)
    report = MetricsReport(
        labels=tuple(counts.labels),
        total=total,
        accuracy=int(np.trace(m)) / total,
        precision=precision,
        recall=recall,
        f1=f1,
        macro_precision=sum(precision.values()) / n,
        macro_recall=sum(recall.values()) / n,
        macro_f1=sum(f1.values()) / n,
        flags=flags,
    )
    if n == 2:
        tn, fp, fn, tp = (int(v) for v in m.ravel())
        report.sensitivity = _ratio(tp, tp + fn, "sensitivity", flags)
        report.specificity = _ratio(tn, tn + fp, "specificity", flags)
    return report


def mean_sd(values):
    """Mean and population standard deviation."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return 0.0, 0.0
    return float(arr.mean()), float(arr.std())


# -- cross-validation ------------------------------------------------------------------

LABELS = {
    "detection": ("healthy", "PD"),
    "staging": ("2", "2.5", "3"),
    "two_step": DIAGNOSES,
}


@dataclass
class FoldResult:
    fold: int
    test_subjects: list
    counts: dict  # view name -> ConfusionCounts (None when nothing to evaluate)
    histories: dict = field(default_factory=dict)

    def metrics(self, view):
        counts = self.counts.get(view)
        return compute_metrics(counts) if counts is not None and counts.total else None


@dataclass
class CrossValidationResult:
    task: str
    k: int
    seed: int
    folds: list
    train_config: dict
    model_config: dict

    @property
    def views(self):
        return ("detection", "two_step") if self.task == "two_step" else (self.task,)

    def aggregate(self, view=None):
        view = view or self.task
        reports = [f.metrics(view) for f in self.folds]
        used = [r for r in reports if r is not None]
        keys = ["accuracy", "macro_precision", "macro_recall", "macro_f1"]
        if used and used[0].sensitivity is not None:
            keys += ["sensitivity", "specificity"]
        agg = {}
        for key in keys:
            mean, sd = mean_sd([getattr(r, key) for r in used])
            agg[key] = {"mean": mean, "sd": sd}
        pooled = None
        for f in self.folds:
            c = f.counts.get(view)
            if c is not None:
                pooled = c if pooled is None else pooled + c
        agg["folds_evaluated"] = len(used)
        agg["pooled"] = compute_metrics(pooled).to_dict() if pooled is not None and pooled.total else None
        return agg

    def to_json(self) -> str:
        doc = {
            "task": self.task,
            "k": self.k,
            "seed": self.seed,
            "train_config": self.train_config,
            "model_config": self.model_config,
            "views": {},
        }
        for view in self.views:
            folds = []
            for f in self.folds:
                r = f.metrics(view)
                folds.append({"fold": f.fold, "test_subjects": f.test_subjects,
                              "metrics": None if r is None else r.to_dict()})
            doc["views"][view] = {"aggregate": self.aggregate(view), "folds": folds}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def fold_table(self, view=None) -> str:
        view = view or self.task
        out = io.StringIO()
        out.write("fold,walks,accuracy,macro_f1,sensitivity,specificity\n")
        for f in self.folds:
            r = f.metrics(view)
            if r is None:
                out.write(f"{f.fold},0,,,,\n")
                continue
            se = "" if r.sensitivity is None else f"{r.sensitivity:.6f}"
            sp = "" if r.specificity is None else f"{r.specificity:.6f}"
            out.write(f"{f.fold},{r.total},{r.accuracy:.6f},{r.macro_f1:.6f},{se},{sp}\n")
        agg = self.aggregate(view)
        out.write(f"mean,,{agg['accuracy']['mean']:.6f},{agg['macro_f1']['mean']:.6f},,\n")
        out.write(f"sd,,{agg['accuracy']['sd']:.6f},{agg['macro_f1']['sd']:.6f},,\n")
        return out.getvalue()


def fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


def _model_for(task, model_config: Optional[HctConfig]):
    base = default_config(task)
    if model_config is None:
        return base
    return dataclasses.replace(model_config, task=base.task)


def _evaluate_walks(walks, params, target):
    true, pred = [], []
    for walk in walks:
        t = target(walk)
        if t is None or walk.length < params.config.segment_length:
            continue
        true.append(t)
        pred.append(predict_walk(walk, params))
    return true, pred


def _run_fold(walks, plan, fold, task, train_config, model_config, seed):
    tc = dataclasses.replace(train_config, seed=fold_seed(seed, fold))
    test_ids = set(plan.test_subjects(fold))
    test_walks = [w for w in walks if w.subject_id in test_ids]
    result = FoldResult(fold, sorted(test_ids), {})
    models = {}
    for part in ("detection", "staging"):
        if task not in (part, "two_step"):
            continue
        train_data, _ = build_dataset(walks, plan, fold, part, model_config.segment_length)
        cfg = _model_for(part, model_config)
        models[part], history = train(train_data, tc, cfg)
        result.histories[part] = history

    def detect(w):
        return int(w.label.is_pd)

    def stage(w):
        return w.label.stage_index if w.label.stageable else None

    if task in ("detection", "two_step"):
        true, pred = _evaluate_walks(test_walks, models["detection"], detect)
        result.counts["detection"] = ConfusionCounts.from_pairs(true, pred, LABELS["detection"])
    if task == "staging":
        true, pred = _evaluate_walks(test_walks, models["staging"], stage)
        result.counts["staging"] = ConfusionCounts.from_pairs(true, pred, LABELS["staging"])
    if task == "two_step":
        true, pred = [], []
        for walk in test_walks:
            if walk.label.is_pd and not walk.label.stageable:
                continue  # no ground-truth stage to score against
            if walk.length < model_config.segment_length:
                continue
            true.append(0 if not walk.label.is_pd else 1 + walk.label.stage_index)
            pred.append(DIAGNOSES.index(two_step_diagnose(walk, models["detection"], models["staging"])))
        result.counts["two_step"] = ConfusionCounts.from_pairs(true, pred, LABELS["two_step"])
    log.info("fold %d done", fold)
    return result


def cross_validate(walks, k: int = 10, train_config: Optional[TrainConfig] = None,
                   model_config: Optional[HctConfig] = None, task: str = "detection",
                   seed: int = 0, jobs: int = 1) -> CrossValidationResult:
    """Subject-level k-fold cross-validation with walk-level majority-vote scoring.

    ``walks`` are labeled, normalized records. ``task`` is ``detection``,
    ``staging`` or ``two_step`` (detection plus staging, scored on the four
    classes healthy/2/2.5/3). Folds are stratified PD/control over all
    subjects, so the staging task needs controls present too. Folds run on up
    to ``jobs`` threads; results do not depend on ``jobs``.
    """
    if task not in CV_TASKS:
        raise ConfigError(f"unknown cross-validation task {task!r}; expected one of {CV_TASKS}")
    if jobs < 1:
        raise ConfigError("jobs must be at least 1")
    train_config = train_config or TrainConfig()
    model_config = model_config or default_config("detection")
    subjects = {}
    for w in walks:
        if w.label is None:
            raise ContractError(f"walk {w.key} has no label")
        subjects.setdefault(w.subject_id, w.label)
    plan = make_folds(sorted(subjects.items()), k, seed)
    plan.audit()
    args = [(walks, plan, fold, task, train_config, model_config, seed) for fold in range(k)]
    if jobs == 1:
        folds = [_run_fold(*a) for a in args]
    else:
        with ThreadPoolExecutor(max_workers=min(jobs, k)) as pool:
            folds = list(pool.map(lambda a: _run_fold(*a), args))
    return CrossValidationResult(task, k, seed, folds, train_config.to_dict(), model_config.to_dict())
