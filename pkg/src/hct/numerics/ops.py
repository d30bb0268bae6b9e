"""Differentiable primitives.

Every op accepts tape nodes or plain arrays. With at least one node among
its inputs the result is recorded on that node's tape; with only arrays the
op runs eagerly and returns an array, which keeps inference free of
bookkeeping.
"""
from __future__ import annotations

import numpy as np

from hct.errors import ShapeError
from hct.numerics import kernels
from hct.numerics.tape import Node

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772


def value(x):
    if isinstance(x, Node):
        return x.value
    if isinstance(x, (int, float)):
        # python scalars stay weak so float32 arrays are not promoted
        return x
    return np.asarray(x)


def _wants(x):
    return isinstance(x, Node) and x.needs_grad


def record(out, parents, vjp):
    for p in parents:
        if isinstance(p, Node):
            return p.tape.record(out, parents, vjp)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise arithmetic -------------------------------------------------

def add(a, b):
    av, bv = value(a), value(b)
    out = av + bv

    def vjp(g):
        return (_unbroadcast(g, av.shape) if _wants(a) else None,
                _unbroadcast(g, bv.shape) if _wants(b) else None)

    return record(out, (a, b), vjp)


def sub(a, b):
    av, bv = value(a), value(b)
    out = av - bv

    def vjp(g):
        return (_unbroadcast(g, av.shape) if _wants(a) else None,
                -_unbroadcast(g, bv.shape) if _wants(b) else None)

    return record(out, (a, b), vjp)


def mul(a, b):
    av, bv = value(a), value(b)
    out = av * bv

    def vjp(g):
        return (_unbroadcast(g * bv, av.shape) if _wants(a) else None,
                _unbroadcast(g * av, bv.shape) if _wants(b) else None)

    return record(out, (a, b), vjp)


def matmul(a, b):
    """Batched matrix product over the last two axes (both operands >= 2-D)."""
    av, bv = value(a), value(b)
    if av.ndim < 2 or bv.ndim < 2:
        raise ShapeError("matmul operands must be at least 2-D; use dense() for vectors")
    if av.shape[-1] != bv.shape[-2]:
        raise ShapeError(f"matmul mismatch: {av.shape} @ {bv.shape}")
    out = av @ bv

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape) if _wants(a) else None
        if not _wants(b):
            gb = None
        elif bv.ndim == 2:
            # shared weight matrix: fold every leading axis into one GEMM
            gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)
        return ga, gb

    return record(out, (a, b), vjp)


# -- shape ------------------------------------------------------------------

def reshape(x, shape):
    xv = value(x)
    out = xv.reshape(shape)

    def vjp(g):
        return (g.reshape(xv.shape),)

    return record(out, (x,), vjp)


def transpose(x, axes):
    xv = value(x)
    out = np.transpose(xv, axes)
    inverse = np.argsort(axes)

    def vjp(g):
        return (np.transpose(g, inverse),)

    return record(out, (x,), vjp)


def swap_last(x):
    axes = list(range(value(x).ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, tuple(axes))


# -- reductions -------------------------------------------------------------

def sum(x, axis=None):  # noqa: A001 - mirrors numpy naming
    xv = value(x)
    out = np.asarray(xv.sum(axis=axis))

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, xv.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), xv.shape).copy(),)

    return record(out, (x,), vjp)


def mean(x, axis=None):
    xv = value(x)
    count = xv.size if axis is None else xv.shape[axis]
    return mul(sum(x, axis), 1.0 / count)


# -- activations ------------------------------------------------------------

def selu(x):
    xv = value(x)
    out, der = kernels.selu_forward(xv)

    def vjp(g):
        return (g * der,)

    return record(out, (x,), vjp)


def sigmoid(x):
    xv = value(x)
    e = np.exp(-np.abs(xv))
    out = np.where(xv >= 0, 1 / (1 + e), e / (1 + e)).astype(xv.dtype, copy=False)

    def vjp(g):
        return (g * out * (1 - out),)

    return record(out, (x,), vjp)


def softmax(x):
    """Softmax over the last axis."""
    xv = value(x)
    shifted = np.exp(xv - xv.max(axis=-1, keepdims=True))
    out = shifted / shifted.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return record(out, (x,), vjp)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize the last axis to zero mean and unit variance, then scale and shift."""
    xv, gv, bv = value(x), value(gamma), value(beta)
    mu = xv.mean(axis=-1, keepdims=True)
    centered = xv - mu
    inv = 1 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv
    out = xhat * gv + bv

    def vjp(g):
        d = xv.shape[-1]
        gxhat = g * gv
        gx = inv / d * (
            d * gxhat
            - gxhat.sum(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True)
        )
        flat = (-1, d)
        ggamma = (g * xhat).reshape(flat).sum(axis=0)
        gbeta = g.reshape(flat).sum(axis=0)
        return gx, ggamma.reshape(gv.shape), gbeta.reshape(bv.shape)

    return record(out, (x, gamma, beta), vjp)


def dropout(x, rate, rng):
    """Inverted dropout; identity when ``rng`` is None or ``rate`` is 0."""
    if rng is None or rate <= 0:
        return x
    xv = value(x)
    keep = rng.random(xv.shape) >= rate
    mask = keep.astype(xv.dtype) / xv.dtype.type(1 - rate)
    return mul(x, mask)


# -- convolution and pooling --------------------------------------------------

def conv1d(x, kernels_, bias):
    """Valid, stride-1 convolution over axis -2 of ``x[..., L, Cin]``.

    ``kernels_`` is ``[K, Cin, Cout]``; output is ``[..., L-K+1, Cout]``.
    """
    xv, wv, bv = value(x), value(kernels_), value(bias)
    if xv.ndim < 2 or wv.ndim != 3:
        raise ShapeError(f"conv1d expects input [..., L, Cin] and kernels [K, Cin, Cout], "
                         f"got {xv.shape} and {wv.shape}")
    k, cin, cout = wv.shape
    *lead, length, c = xv.shape
    if c != cin:
        raise ShapeError(f"conv1d channel mismatch: input has {c}, kernels expect {cin}")
    if length < k:
        raise ShapeError(f"conv1d input length {length} shorter than kernel {k}")
    if bv.shape != (cout,):
        raise ShapeError(f"conv1d bias shape {bv.shape} != ({cout},)")
    x3 = xv.reshape(-1, length, c)
    out = kernels.conv1d_forward(x3, wv, bv).reshape(*lead, length - k + 1, cout)

    def vjp(g):
        gx, gw, gb = kernels.conv1d_backward(x3, wv, g.reshape(-1, length - k + 1, cout))
        return gx.reshape(xv.shape), gw, gb

    return record(out, (x, kernels_, bias), vjp)


def maxpool1d(x, width=2):
    """Non-overlapping max pooling over axis -2; a trailing odd sample is dropped."""
    if width != 2:
        raise ShapeError(f"only width-2 pooling is supported, got {width}")
    xv = value(x)
    if xv.ndim < 2 or xv.shape[-2] < 2:
        raise ShapeError(f"maxpool1d needs at least 2 samples along axis -2, got shape {xv.shape}")
    *lead, length, c = xv.shape
    out3, idx = kernels.maxpool2_forward(xv.reshape(-1, length, c))
    out = out3.reshape(*lead, length // 2, c)

    def vjp(g):
        gx = kernels.maxpool2_backward(g.reshape(out3.shape), idx, length)
        return (gx.reshape(xv.shape),)

    return record(out, (x,), vjp)

