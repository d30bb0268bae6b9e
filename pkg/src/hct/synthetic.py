"""Synthetic gait recordings for tests, demos and smoke runs.

Each sensor carries a rectified sinusoid (the stance phase of a stride) whose
cadence slows and whose tremor component grows with disease severity, so the
classes are separable even after per-signal normalization.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from hct.dataio import (
    SEGMENT_LENGTH,
    SENSOR_COUNT,
    STAGES,
    DiagnosisLabel,
    SegmentData,
    WalkRecord,
    serialize_walk,
)

# stride frequency (Hz) and tremor amplitude per class: control, H&Y 2, 2.5, 3
CADENCE = {0.0: 1.0, 2.0: 0.8, 2.5: 0.65, 3.0: 0.5}
TREMOR = {0.0: 0.0, 2.0: 0.05, 2.5: 0.1, 3.0: 0.15}


def synthetic_signals(label: DiagnosisLabel, length: int, rng, sample_rate=100.0, noise=0.03):
    """``[18, length]`` force traces in newtons for one walk."""
    stage = label.hy_stage if label.is_pd and label.hy_stage is not None else (2.0 if label.is_pd else 0.0)
    t = np.arange(length) / sample_rate
    freq = CADENCE[stage] * (1 + 0.03 * rng.standard_normal())
    phase = rng.uniform(0, 2 * np.pi)
    signals = np.empty((SENSOR_COUNT, length))
    for s in range(SENSOR_COUNT):
        # left foot sensors 0-8, right foot 9-17 half a stride later
        offset = np.pi * (s >= SENSOR_COUNT // 2) + 0.2 * (s % 9)
        stance = np.maximum(np.sin(2 * np.pi * freq * t + phase + offset), 0) ** 1.5
        tremor = TREMOR[stage] * np.sin(2 * np.pi * 5.0 * t + rng.uniform(0, 2 * np.pi))
        gain = rng.uniform(200, 600)
        signals[s] = gain * (stance + tremor + noise * rng.standard_normal(length)) + 20
    return signals


def synthetic_walk(subject_id: str, walk_id: str, label: DiagnosisLabel, length: int, rng,
                   sample_rate=100.0) -> WalkRecord:
    signals = synthetic_signals(label, length, rng, sample_rate)
    time = np.round(np.arange(length) / sample_rate, 6)
    return WalkRecord(subject_id, walk_id, signals, time, sample_rate, label)


def synthetic_corpus(n_control=4, n_per_stage=2, walks_per_subject=1, length=500, seed=0):
    """Labeled walks named like the public corpus (``SyCo01``, ``SyPt01``, ...)."""
    rng = np.random.default_rng(seed)
    subjects = [(f"SyCo{i + 1:02d}", DiagnosisLabel(False, 0.0)) for i in range(n_control)]
    number = 0
    for stage in STAGES:
        for _ in range(n_per_stage):
            number += 1
            subjects.append((f"SyPt{number:02d}", DiagnosisLabel(True, stage)))
    walks = []
    for subject, label in subjects:
        for w in range(walks_per_subject):
            walks.append(synthetic_walk(subject, f"{w + 1:02d}", label, length, rng))
    return walks


def write_corpus(directory, walks) -> Path:
    """Write walk files plus ``labels.csv``; returns the label table path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    labels = {}
    for walk in walks:
        (directory / f"{walk.key}.txt").write_text(serialize_walk(walk))
        labels[walk.subject_id] = walk.label
    table = directory / "labels.csv"
    lines = ["subject_id,group,hy_stage"]
    for subject in sorted(labels):
        lab = labels[subject]
        stage = "" if lab.hy_stage is None else f"{lab.hy_stage:g}"
        lines.append(f"{subject},{'PD' if lab.is_pd else 'CO'},{stage}")
    table.write_text("\n".join(lines) + "\n")
    return table


def synthetic_segments(count: int, task="detection", seed=0, n=SEGMENT_LENGTH) -> SegmentData:
    """``count`` normalized segments with balanced labels, one subject per segment."""
    rng = np.random.default_rng(seed)
    classes = 2 if task == "detection" else 3
    y = np.arange(count) % classes
    xs = []
    for label in y:
        if task == "detection":
            lab = DiagnosisLabel(bool(label), 2.0 if label else 0.0)
        else:
            lab = DiagnosisLabel(True, STAGES[label])
        sig = synthetic_signals(lab, n, rng)
        sig = (sig - sig.mean(axis=1, keepdims=True)) / (sig.std(axis=1, keepdims=True) + 1e-8)
        xs.append(sig)
    subjects = np.array([f"S{i:04d}" for i in range(count)], dtype=object)
    walks = np.array([f"S{i:04d}_01" for i in range(count)], dtype=object)
    return SegmentData(np.array(xs, np.float32), y.astype(np.int64), subjects, walks)
