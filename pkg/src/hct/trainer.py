"""Mini-batch Nadam training with dropout, subject-level validation and early stopping."""
from __future__ import annotations

import dataclasses
import io
import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from hct.checkpoint import load_checkpoint, save_checkpoint
from hct.dataio import SegmentData
from hct.errors import ConfigError, ContractError
from hct.model import HctConfig, HctParams, init_params, network, predict_proba, record
from hct.numerics import backward, binary_cross_entropy, categorical_cross_entropy
from hct.numerics.optim import OptimizerState, nadam_step

__all__ = [
    "TrainConfig",
    "TrainHistory",
    "batch_loss",
    "early_stop",
    "evaluate",
    "load_checkpoint",
    "save_checkpoint",
    "split_validation",
    "train",
    "train_step",
]

log = logging.getLogger(__name__)

DEFAULT_LR = {"two_class": 0.0005, "multi_class": 0.001}
MIN_DELTA = 1e-6


@dataclass
class TrainConfig:
    batch_size: int = 200
    max_epochs: int = 25
    learning_rate: Optional[float] = None  # None: per-task default
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    dropout: float = 0.3
    patience: int = 5
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be at least 1")
        if self.patience < 1:
            raise ConfigError("patience must be at least 1")
        if not 0 < self.validation_fraction < 1:
            raise ConfigError("validation_fraction must lie strictly between 0 and 1")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must be in [0, 1)")
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")

    def lr_for(self, task: str) -> float:
        return self.learning_rate if self.learning_rate is not None else DEFAULT_LR[task]

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class TrainHistory:
    """Per-epoch curves; epochs are numbered from 1."""

    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    batch_loss: list = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0
    validation_subjects: list = field(default_factory=list)

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("epoch,train_loss,val_loss,val_acc\n")
        for i, row in enumerate(zip(self.train_loss, self.val_loss, self.val_acc), 1):
            out.write(f"{i},{row[0]:.8f},{row[1]:.8f},{row[2]:.6f}\n")
        return out.getvalue()


def _loss_fn(config: HctConfig):
    return binary_cross_entropy if config.output_units == 1 else categorical_cross_entropy


def batch_loss(params: HctParams, x, y, rng=None):
    """Loss of one batch and the gradient of every parameter.

    Dropout is active iff ``rng`` is given.
    """
    tape, nodes = record(params)
    pred = network(np.asarray(x, dtype=np.float32), nodes, params.config, rng)
    loss = _loss_fn(params.config)(pred, y)
    return loss, backward(tape, loss.node)


def train_step(params: HctParams, x, y, state: OptimizerState, rng=None):
    """One Nadam update from a single batch; returns ``(new_params, loss)``."""
    loss, grads = batch_loss(params, x, y, rng)
    arrays, _ = nadam_step(params.arrays, grads, state)
    return HctParams(params.config, arrays), loss


def evaluate(params: HctParams, data: SegmentData, batch_size=256):
    """Mean loss and segment accuracy in inference mode."""
    prob = predict_proba(params, data.x, batch_size)
    loss = _loss_fn(params.config)(prob, data.y).scalar
    if params.config.output_units == 1:
        pred = (prob >= 0.5).astype(np.int64)
    else:
        pred = prob.argmax(axis=1)
    return loss, float(np.mean(pred == data.y))


def _validation_loss(params: HctParams, data: SegmentData):
    return evaluate(params, data)


def early_stop(history, patience: int) -> bool:
    """True once validation loss went ``patience`` epochs without improving by more than 1e-6.

    ``history`` is a :class:`TrainHistory` or a plain sequence of losses.
    """
    losses = history.val_loss if isinstance(history, TrainHistory) else list(history)
    if not losses:
        return False
    best, since = losses[0], 0
    for loss in losses[1:]:
        if loss < best - MIN_DELTA:
            best, since = loss, 0
        else:
            since += 1
    return since >= patience


def _subject_classes(data: SegmentData):
    classes = {}
    for subject, label in zip(data.subjects, data.y):
        classes.setdefault(subject, []).append(int(label))
    return {s: int(np.bincount(v).argmax()) for s, v in classes.items()}


def split_validation(data: SegmentData, fraction: float, rng):
    """Hold out a class-stratified ``fraction`` of subjects; returns ``(train, val, val_subjects)``.

    Every class keeps at least one training subject. With a single subject
    nothing is held out and ``val`` is None.
    """
    classes = _subject_classes(data)
    if len(classes) < 2:
        return data, None, []
    by_class = {}
    for subject in sorted(classes):
        by_class.setdefault(classes[subject], []).append(subject)
    held = []
    for label in sorted(by_class):
        members = list(by_class[label])
        rng.shuffle(members)
        take = min(int(round(fraction * len(members))), len(members) - 1)
        held.extend(members[:take])
    if not held:
        largest = max(by_class.values(), key=len)
        held = [largest[int(rng.integers(len(largest)))]] if len(largest) > 1 else []
    if not held:
        return data, None, []
    mask = np.isin(data.subjects, held)
    return data.subset(~mask), data.subset(mask), sorted(held)


def _check_labels(data: SegmentData, config: HctConfig):
    units = max(config.output_units, 2)
    if data.y.min() < 0 or data.y.max() >= units:
        raise ContractError(f"labels outside [0, {units}) for a {config.task} model")
    if len(np.unique(data.y)) < 2:
        warnings.warn("training set contains a single class", RuntimeWarning, stacklevel=3)


def train(train_data: SegmentData, config: TrainConfig, model_config: HctConfig,
          init: Optional[HctParams] = None, validation: Optional[SegmentData] = None):
    """Train a network; returns ``(params, history)`` with the best-validation-epoch weights.

    Subjects are split into train/validation by ``config.validation_fraction``
    unless ``validation`` is given. The training dropout rate overrides the one
    in ``model_config``.
    """
    if train_data is None or len(train_data) == 0:
        raise ContractError("no training segments")
    model_config = dataclasses.replace(model_config, dropout=config.dropout)
    _check_labels(train_data, model_config)
    split_seed, order_seed, drop_seed = np.random.SeedSequence(config.seed).spawn(3)
    history = TrainHistory()
    if validation is None:
        fit, validation, history.validation_subjects = split_validation(
            train_data, config.validation_fraction, np.random.default_rng(split_seed))
    else:
        fit = train_data
    if validation is None:
        log.warning("only one subject: monitoring training loss instead of validation loss")
        validation = fit

    params = init if init is not None else init_params(model_config, config.seed)
    params = HctParams(model_config, {k: np.asarray(v, np.float32) for k, v in params.arrays.items()})
    state = OptimizerState(config.lr_for(model_config.task), config.beta1, config.beta2, config.epsilon)
    order_rng = np.random.default_rng(order_seed)
    drop_rng = np.random.default_rng(drop_seed) if model_config.dropout > 0 else None

    best = (np.inf, params, 0)
    for epoch in range(1, config.max_epochs + 1):
        order = order_rng.permutation(len(fit))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            params, loss = train_step(params, fit.x[idx], fit.y[idx], state, drop_rng)
            history.batch_loss.append(loss.scalar)
            total += loss.scalar * len(idx)
        history.train_loss.append(total / len(fit))
        val_loss, val_acc = _validation_loss(params, validation)
        history.val_loss.append(float(val_loss))
        history.val_acc.append(float(val_acc))
        log.info("epoch %d train %.5f val %.5f acc %.4f", epoch, history.train_loss[-1], val_loss, val_acc)
        if val_loss < best[0]:
            best = (val_loss, params, epoch)
        history.stopped_epoch = epoch
        if early_stop(history, config.patience):
            break
    history.best_epoch = best[2]
    return best[1], history
