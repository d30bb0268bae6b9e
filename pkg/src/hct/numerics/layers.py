"""Neural layers composed from the differentiable primitives.

Parameter groups are passed as plain mappings (name -> array or tape node)
so the same code serves eager inference and recorded training passes.
"""
from __future__ import annotations

import math

from hct.errors import ConfigError, ShapeError
from hct.numerics import ops
from hct.numerics.ops import conv1d, maxpool1d  # noqa: F401 - re-exported layer primitives

ACTIVATIONS = {
    "selu": ops.selu,
    "sigmoid": ops.sigmoid,
    "softmax": ops.softmax,
    "identity": lambda x: x,
}


def dense(x, weights, bias, activation="identity"):
    """``act(x @ W + b)`` for ``x[..., n]``, ``W[n, m]``, ``b[m]``."""
    try:
        act = ACTIVATIONS[activation]
    except KeyError:
        raise ConfigError(f"unknown activation {activation!r}") from None
    xv, wv = ops.value(x), ops.value(weights)
    if wv.ndim != 2 or xv.shape[-1] != wv.shape[0]:
        raise ShapeError(f"dense shape mismatch: input {xv.shape}, weights {wv.shape}")
    if ops.value(bias).shape != (wv.shape[1],):
        raise ShapeError(f"dense bias must have shape ({wv.shape[1]},)")
    if xv.ndim == 1:
        y = ops.reshape(ops.matmul(ops.reshape(x, (1, -1)), weights), (wv.shape[1],))
    else:
        y = ops.matmul(x, weights)
    return act(ops.add(y, bias))


def _split_heads(x, heads):
    *lead, length, d = ops.value(x).shape
    n = len(lead)
    x = ops.reshape(x, (*lead, length, heads, d // heads))
    return ops.transpose(x, (*range(n), n + 1, n, n + 2))


def _merge_heads(x):
    *lead, heads, length, dh = ops.value(x).shape
    n = len(lead)
    x = ops.transpose(x, (*range(n), n + 1, n, n + 2))
    return ops.reshape(x, (*lead, length, heads * dh))


def multi_head_attention(seq, params, heads=4, return_weights=False):
    """Scaled dot-product self-attention over ``seq[..., L, d]``.

    ``params`` holds ``wq, bq, wk, wv, bv, wo, bo``. There is no key bias:
    it adds the same score to every key of a query row, so softmax cancels it
    and its gradient is identically zero.
    """
    d = ops.value(seq).shape[-1]
    if heads < 1 or d % heads:
        raise ConfigError(f"token width {d} is not divisible by {heads} heads")
    q = _split_heads(ops.add(ops.matmul(seq, params["wq"]), params["bq"]), heads)
    k = _split_heads(ops.matmul(seq, params["wk"]), heads)
    v = _split_heads(ops.add(ops.matmul(seq, params["wv"]), params["bv"]), heads)
    scores = ops.mul(ops.matmul(q, ops.swap_last(k)), 1.0 / math.sqrt(d // heads))
    weights = ops.softmax(scores)
    context = _merge_heads(ops.matmul(weights, v))
    out = ops.add(ops.matmul(context, params["wo"]), params["bo"])
    if return_weights:
        return out, weights
    return out


def encoder_block(seq, params, heads=4, dropout_rate=0.0, rng=None, attention_dropout=True):
    """Post-norm transformer encoder block.

    Attention and a position-wise ``d -> 4d -> d`` SeLU feed-forward network,
    each wrapped in a residual connection followed by layer normalization.
    Dropout on the attention output is active only when ``rng`` is given.
    """
    attn = multi_head_attention(seq, params, heads)
    if attention_dropout:
        attn = ops.dropout(attn, dropout_rate, rng)
    x = ops.layer_norm(ops.add(seq, attn), params["ln1_g"], params["ln1_b"])
    hidden = dense(x, params["ff_w1"], params["ff_b1"], "selu")
    ff = dense(hidden, params["ff_w2"], params["ff_b2"])
    return ops.layer_norm(ops.add(x, ff), params["ln2_g"], params["ln2_b"])


def encoder_param_shapes(d):
    """Shapes of every array one encoder block of width ``d`` needs."""
    return {
        "wq": (d, d), "bq": (d,),
        "wk": (d, d),
        "wv": (d, d), "bv": (d,),
        "wo": (d, d), "bo": (d,),
        "ln1_g": (d,), "ln1_b": (d,),
        "ff_w1": (d, 4 * d), "ff_b1": (4 * d,),
        "ff_w2": (4 * d, d), "ff_b2": (d,),
        "ln2_g": (d,), "ln2_b": (d,),
    }
