"""VGRF walk files, label tables, normalization, segmentation and subject folds."""
from __future__ import annotations

import csv
import io
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from hct.errors import ConfigError, ContractError, FoldRangeError, FormatError

log = logging.getLogger(__name__)

SENSOR_COUNT = 18
SEGMENT_LENGTH = 100
NORM_EPS = 1e-8
STAGES = (2.0, 2.5, 3.0)
TASKS = ("detection", "staging")

FILENAME_RE = re.compile(
    r"^(?P<prefix>[A-Za-z]*?)(?P<group>Pt|Co)(?P<num>\d+)_(?P<walk>\d+)(?:\.txt)?$"
)
_MISSING = {"", "nan", "na", "n/a", "none", "-", "?"}
_PD_GROUPS = {"pd", "pt", "parkinson", "parkinsons", "1"}
_CONTROL_GROUPS = {"co", "control", "ctrl", "hc", "healthy", "2"}


@dataclass(frozen=True)
class DiagnosisLabel:
    """Clinical label of one subject.

    Controls always carry stage 0. A PD subject whose Hoehn & Yahr stage is
    missing or outside {2, 2.5, 3} has ``hy_stage=None``: it still counts for
    detection but is never used for staging.
    """

    is_pd: bool
    hy_stage: Optional[float] = 0.0

    def __post_init__(self):
        if not self.is_pd and self.hy_stage != 0:
            raise ContractError("control subjects must have H&Y stage 0")
        if self.is_pd and self.hy_stage is not None and self.hy_stage not in STAGES:
            raise ContractError(f"PD stage {self.hy_stage} not in {STAGES}")

    @property
    def stageable(self) -> bool:
        return self.is_pd and self.hy_stage is not None

    @property
    def stage_index(self) -> int:
        return STAGES.index(self.hy_stage)


@dataclass
class WalkRecord:
    subject_id: str
    walk_id: str
    signals: np.ndarray  # [18, T]
    time: np.ndarray  # [T]
    sample_rate: float = 100.0
    label: Optional[DiagnosisLabel] = None
    normalized: bool = False

    def __post_init__(self):
        if self.signals.ndim != 2 or self.signals.shape[0] != SENSOR_COUNT:
            raise FormatError(f"expected {SENSOR_COUNT} signals, got array of shape {self.signals.shape}")
        if self.signals.shape[1] < 1:
            raise FormatError("walk has no samples")
        if self.time.shape != (self.signals.shape[1],):
            raise FormatError("time column length differs from signal length")
        if np.any(np.diff(self.time) <= 0):
            raise FormatError("sample times are not strictly increasing")

    @property
    def key(self) -> str:
        return f"{self.subject_id}_{self.walk_id}"

    @property
    def length(self) -> int:
        return self.signals.shape[1]


@dataclass
class SegmentSet:
    """One window of ``n`` samples on all 18 sensors of a walk."""

    data: np.ndarray  # [18, n]
    index: int
    subject_id: str
    walk_id: str


@dataclass
class SegmentData:
    """Stacked segments with labels and provenance, one row per segment."""

    x: np.ndarray  # [N, 18, n] float32
    y: np.ndarray  # [N] int64
    subjects: np.ndarray  # [N] str
    walks: np.ndarray  # [N] walk keys

    def __len__(self):
        return len(self.y)

    def subset(self, mask):
        return SegmentData(self.x[mask], self.y[mask], self.subjects[mask], self.walks[mask])

    def items(self):
        for i in range(len(self)):
            subject, walk = self.walks[i].rsplit("_", 1)
            yield SegmentSet(self.x[i], i, subject, walk), int(self.y[i])

    @classmethod
    def empty(cls, n=SEGMENT_LENGTH):
        return cls(np.zeros((0, SENSOR_COUNT, n), np.float32), np.zeros(0, np.int64),
                   np.zeros(0, dtype=object), np.zeros(0, dtype=object))


@dataclass
class FoldPlan:
    k: int
    seed: int
    assignment: dict = field(default_factory=dict)  # subject_id -> fold index

    def test_subjects(self, fold):
        self._check(fold)
        return sorted(s for s, f in self.assignment.items() if f == fold)

    def train_subjects(self, fold):
        self._check(fold)
        return sorted(s for s, f in self.assignment.items() if f != fold)

    def _check(self, fold):
        if not 0 <= fold < self.k:
            raise FoldRangeError(f"fold index {fold} outside [0, {self.k})")

    def audit(self):
        """Verify the plan is a partition with disjoint train/test subjects per fold."""
        everyone = set(self.assignment)
        seen = set()
        for fold in range(self.k):
            test = set(self.test_subjects(fold))
            train = set(self.train_subjects(fold))
            if test & train:
                raise ContractError(f"fold {fold} leaks subjects {sorted(test & train)}")
            if test | train != everyone:
                raise ContractError(f"fold {fold} does not cover every subject")
            if test & seen:
                raise ContractError(f"fold {fold} reuses test subjects")
            seen |= test
        if seen != everyone:
            raise ContractError("some subjects are never tested")
        return True


# -- parsing -------------------------------------------------------------------

def parse_filename(filename):
    """Split ``GaPt07_01.txt`` into ``("GaPt07", "01", "Pt")``."""
    m = FILENAME_RE.match(Path(filename).name)
    if m is None:
        raise FormatError(f"{filename}: name does not match <Prefix><Pt|Co><Num>_<Walk>.txt")
    subject = m["prefix"] + m["group"] + m["num"]
    return subject, m["walk"], m["group"]


def parse_walk_file(content, filename) -> WalkRecord:
    """Parse a 19-column walk file (time + 18 forces) into an unlabeled record."""
    if isinstance(content, bytes):
        try:
            content = content.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{filename}: not a text file") from exc
    subject, walk, _ = parse_filename(filename)
    rows = []
    for lineno, line in enumerate(content.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != SENSOR_COUNT + 1:
            raise FormatError(f"{filename}:{lineno}: expected {SENSOR_COUNT + 1} columns, got {len(tokens)}")
        try:
            rows.append([float(t) for t in tokens])
        except ValueError:
            bad = next(t for t in tokens if not _is_float(t))
            raise FormatError(f"{filename}:{lineno}: non-numeric token {bad!r}") from None
    if not rows:
        raise FormatError(f"{filename}: empty file")
    table = np.array(rows, dtype=np.float64)
    time = table[:, 0]
    try:
        record = WalkRecord(subject, walk, np.ascontiguousarray(table[:, 1:].T), time)
    except FormatError as exc:
        raise FormatError(f"{filename}: {exc}") from None
    if len(time) > 1:
        record.sample_rate = 1.0 / float(np.median(np.diff(time)))
    return record


def _is_float(token):
    try:
        float(token)
    except ValueError:
        return False
    return True


def read_walk(path) -> WalkRecord:
    path = Path(path)
    return parse_walk_file(path.read_bytes(), path.name)


def serialize_walk(walk: WalkRecord) -> str:
    """Inverse of :func:`parse_walk_file` (10 significant digits per value)."""
    table = np.column_stack([walk.time, walk.signals.T])
    buf = io.StringIO()
    np.savetxt(buf, table, fmt="%.10g", delimiter="\t")
    return buf.getvalue()


# -- labels ----------------------------------------------------------------------

@dataclass(frozen=True)
class LabelColumns:
    subject: str = "subject_id"
    group: str = "group"
    stage: str = "hy_stage"


_ALIASES = {
    "subject": ("subject_id", "id", "subject"),
    "group": ("group",),
    "stage": ("hy_stage", "hoehnyahr", "hoehn_yahr", "hy", "stage"),
}


def _resolve_column(header, wanted, role):
    lowered = {h.strip().lower(): i for i, h in enumerate(header)}
    for name in (wanted, *_ALIASES[role]):
        if name.lower() in lowered:
            return lowered[name.lower()]
    raise FormatError(f"label table has no {role} column (looked for {wanted!r})")


def load_labels(source, columns: LabelColumns = LabelColumns()) -> dict:
    """Read a delimited metadata table into ``{subject_id: DiagnosisLabel}``.

    ``source`` is a path or an open text stream. PD subjects with a missing or
    out-of-range stage are kept with ``hy_stage=None`` and logged.
    """
    text = source.read() if hasattr(source, "read") else Path(source).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError("label table is empty")
    try:
        delimiter = csv.Sniffer().sniff(lines[0], delimiters=",\t;").delimiter
        rows = list(csv.reader(lines, delimiter=delimiter))
    except csv.Error:
        rows = [ln.split() for ln in lines]
    header, body = rows[0], rows[1:]
    si = _resolve_column(header, columns.subject, "subject")
    gi = _resolve_column(header, columns.group, "group")
    hi = _resolve_column(header, columns.stage, "stage")

    labels = {}
    for lineno, row in enumerate(body, start=2):
        if len(row) <= max(si, gi, hi):
            row = row + [""] * (max(si, gi, hi) + 1 - len(row))
        subject = row[si].strip()
        group = row[gi].strip().lower()
        if subject in labels:
            raise FormatError(f"label table line {lineno}: duplicate subject {subject!r}")
        if group in _CONTROL_GROUPS:
            labels[subject] = DiagnosisLabel(False, 0.0)
        elif group in _PD_GROUPS:
            labels[subject] = DiagnosisLabel(True, _pd_stage(subject, row[hi]))
        else:
            raise FormatError(f"label table line {lineno}: unknown group {row[gi]!r}")
    return labels


def _pd_stage(subject, raw):
    token = raw.strip().lower()
    stage = None
    if token not in _MISSING:
        try:
            stage = float(token)
        except ValueError:
            raise FormatError(f"subject {subject}: H&Y stage {raw!r} is not a number") from None
    if stage not in STAGES:
        log.warning("subject %s: H&Y stage %s outside %s, excluded from staging", subject, raw, STAGES)
        return None
    return stage


# -- preprocessing -----------------------------------------------------------------

def normalize_signal(signal) -> np.ndarray:
    """Zero mean, unit population standard deviation (guarded for constant signals)."""
    s = np.asarray(signal, dtype=np.float64)
    if s.size == 0:
        raise ContractError("cannot normalize an empty signal")
    return (s - s.mean()) / (s.std() + NORM_EPS)


def normalize_walk(walk: WalkRecord) -> WalkRecord:
    """Normalize each of the 18 channels over the whole walk."""
    signals = np.stack([normalize_signal(s) for s in walk.signals])
    return replace(walk, signals=signals, normalized=True)


def segment_walk(walk: WalkRecord, n: int = SEGMENT_LENGTH) -> list:
    """Non-overlapping ``n``-sample windows; a trailing remainder is dropped."""
    if n < 1:
        raise ConfigError("segment length must be positive")
    if not walk.normalized:
        raise ContractError("segment_walk expects a normalized walk")
    count = walk.length // n
    if count == 0:
        log.warning("walk %s has %d samples, fewer than one %d-sample segment", walk.key, walk.length, n)
        return []
    data = walk.signals[:, : count * n].astype(np.float32).reshape(SENSOR_COUNT, count, n)
    return [SegmentSet(np.ascontiguousarray(data[:, j]), j, walk.subject_id, walk.walk_id)
            for j in range(count)]


def walk_segments_array(walk: WalkRecord, n: int = SEGMENT_LENGTH) -> np.ndarray:
    """All segments of a walk stacked as ``[S, 18, n]``."""
    segs = segment_walk(walk, n)
    if not segs:
        return np.zeros((0, SENSOR_COUNT, n), np.float32)
    return np.stack([s.data for s in segs])


# -- folds and datasets ---------------------------------------------------------------

def make_folds(subjects, k: int = 10, seed: int = 0) -> FoldPlan:
    """Stratified subject-level folds.

    PD and control subjects are shuffled separately, then dealt round-robin
    into ``k`` folds (controls continue where PD dealing stopped so that fold
    sizes stay within one of each other).
    """
    if k < 2:
        raise ConfigError("need at least 2 folds")
    pd = sorted(s for s, lab in subjects if lab.is_pd)
    co = sorted(s for s, lab in subjects if not lab.is_pd)
    if len(set(pd) | set(co)) != len(pd) + len(co):
        raise ContractError("duplicate subject ids")
    if len(pd) < k or len(co) < k:
        raise ConfigError(f"{k} folds need at least {k} subjects per group (PD {len(pd)}, control {len(co)})")
    rng = np.random.default_rng(seed)
    assignment = {}
    offset = 0
    for stratum in (pd, co):
        order = rng.permutation(len(stratum))
        for pos, idx in enumerate(order):
            assignment[stratum[idx]] = (offset + pos) % k
        offset = (offset + len(stratum)) % k
    return FoldPlan(k, seed, assignment)


def _walk_target(walk, task):
    if walk.label is None:
        raise ContractError(f"walk {walk.key} has no label")
    if task == "detection":
        return int(walk.label.is_pd)
    if task == "staging":
        return walk.label.stage_index if walk.label.stageable else None
    raise ConfigError(f"unknown task {task!r}; expected one of {TASKS}")


def collect_segments(walks, task, n=SEGMENT_LENGTH) -> SegmentData:
    """Segments and task labels of every eligible walk."""
    xs, ys, subjects, keys = [], [], [], []
    for walk in walks:
        target = _walk_target(walk, task)
        if target is None:
            continue
        arr = walk_segments_array(walk, n)
        if not len(arr):
            continue
        xs.append(arr)
        ys.extend([target] * len(arr))
        subjects.extend([walk.subject_id] * len(arr))
        keys.extend([walk.key] * len(arr))
    if not xs:
        return SegmentData.empty(n)
    return SegmentData(np.concatenate(xs), np.array(ys, np.int64),
                       np.array(subjects, dtype=object), np.array(keys, dtype=object))


def build_dataset(walks, fold_plan: FoldPlan, fold_index: int, task: str, n: int = SEGMENT_LENGTH):
    """Train/test segments for one fold; staging keeps only PD walks with a usable stage."""
    test_subjects = set(fold_plan.test_subjects(fold_index))
    missing = {w.subject_id for w in walks} - set(fold_plan.assignment)
    if missing:
        raise ContractError(f"subjects absent from the fold plan: {sorted(missing)[:5]}")
    train = collect_segments([w for w in walks if w.subject_id not in test_subjects], task, n)
    test = collect_segments([w for w in walks if w.subject_id in test_subjects], task, n)
    return train, test


def attach_labels(walks, labels):
    """Label walks from a subject table; unknown subjects are returned separately."""
    labeled, unknown = [], []
    for walk in walks:
        lab = labels.get(walk.subject_id)
        if lab is None:
            unknown.append(walk)
        else:
            labeled.append(replace(walk, label=lab))
    return labeled, unknown


def filename_label(walk: WalkRecord) -> DiagnosisLabel:
    """Fallback label from the ``Pt``/``Co`` group in the subject id (stage unknown)."""
    _, _, group = parse_filename(walk.key)
    return DiagnosisLabel(True, None) if group == "Pt" else DiagnosisLabel(False, 0.0)


def discover_walk_files(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"dataset directory {directory} does not exist")
    return sorted(p for p in directory.iterdir() if p.is_file() and FILENAME_RE.match(p.name))


def load_corpus(directory, labels=None):
    """Parse, label and normalize every walk file in ``directory``.

    Returns ``(walks, problems)`` where ``problems`` lists ``(filename, message)``
    for files that failed to parse or have no label.
    """
    files = discover_walk_files(directory)
    if not files:
        raise ConfigError(f"no walk files found in {directory}")
    walks, problems = [], []
    for path in files:
        try:
            walk = read_walk(path)
        except FormatError as exc:
            problems.append((path.name, str(exc)))
            continue
        if labels is None:
            walk = replace(walk, label=filename_label(walk))
        elif walk.subject_id in labels:
            walk = replace(walk, label=labels[walk.subject_id])
        else:
            problems.append((path.name, f"subject {walk.subject_id} missing from label table"))
            continue
        walks.append(normalize_walk(walk))
    for name, msg in problems:
        log.warning("skipping %s: %s", name, msg)
    return walks, problems
