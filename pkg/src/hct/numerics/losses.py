"""Binary and categorical cross-entropy with probability clamping."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from hct.errors import ContractError, ValidationError
from hct.numerics import ops
from hct.numerics.tape import Node

EPS = 1e-7
ROW_SUM_TOL = 1e-5


@dataclass
class LossValue:
    """A mean loss with its per-sample terms.

    ``node`` is the scalar tape node when the prediction was recorded on a
    tape, ready for :func:`hct.numerics.tape.backward`.
    """

    scalar: float
    per_sample: np.ndarray
    count: int
    classes: Optional[int] = None
    node: Optional[Node] = None


def _clamp(p):
    return np.clip(p, EPS, 1 - EPS), (p >= EPS) & (p <= 1 - EPS)


def binary_cross_entropy(pred, labels) -> LossValue:
    """Mean of ``-(a log p + (1-a) log(1-p))`` over the batch; ``pred`` is ``[M]``."""
    pv = ops.value(pred)
    a = np.asarray(labels, dtype=np.float64).reshape(-1)
    if pv.size == 0:
        raise ContractError("empty batch")
    pv = pv.reshape(-1)
    if a.shape != pv.shape:
        raise ContractError(f"{a.size} labels for {pv.size} predictions")
    p, live = _clamp(pv.astype(np.float64))
    terms = -(a * np.log(p) + (1 - a) * np.log(1 - p))
    m = terms.size
    out = np.asarray(terms.mean(), dtype=ops.value(pred).dtype)

    def vjp(g):
        d = -(a / p - (1 - a) / (1 - p)) / m * live
        shape = ops.value(pred).shape
        return ((g * d).astype(out.dtype).reshape(shape),)

    node = ops.record(out, (pred,), vjp)
    return LossValue(float(terms.mean()), terms, m, None, node if isinstance(node, Node) else None)


def categorical_cross_entropy(pred, labels) -> LossValue:
    """Mean of ``-sum_b d_b log p_b`` over rows of ``pred[M, B]``.

    ``labels`` may be one-hot rows ``[M, B]`` or integer class indices ``[M]``.
    """
    pv = ops.value(pred)
    if pv.ndim != 2 or pv.shape[0] == 0:
        raise ContractError(f"expected a non-empty [M, B] prediction, got shape {pv.shape}")
    m, b = pv.shape
    onehot = np.asarray(labels)
    if onehot.ndim == 1:
        if onehot.shape[0] != m or onehot.min() < 0 or onehot.max() >= b:
            raise ContractError("integer labels must be in [0, B) with one per row")
        onehot = np.eye(b)[onehot.astype(int)]
    onehot = onehot.astype(np.float64)
    if onehot.shape != pv.shape:
        raise ContractError(f"labels shape {onehot.shape} != predictions {pv.shape}")
    sums = pv.astype(np.float64).sum(axis=1)
    if np.any(np.abs(sums - 1) > ROW_SUM_TOL):
        raise ValidationError("prediction rows must sum to 1")
    p, live = _clamp(pv.astype(np.float64))
    terms = -(onehot * np.log(p)).sum(axis=1)
    out = np.asarray(terms.mean(), dtype=pv.dtype)

    def vjp(g):
        return ((g * (-onehot / p / m * live)).astype(out.dtype),)

    node = ops.record(out, (pred,), vjp)
    return LossValue(float(terms.mean()), terms, m, b, node if isinstance(node, Node) else None)
