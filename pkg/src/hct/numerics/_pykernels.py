"""Pure-numpy kernels for the convolution, SeLU and pooling hot loops.

Signatures match the compiled ``_ckernels`` module exactly; conv/pool arrays
are ``(batch, length, channels)`` and C-contiguous.

The convolution avoids an im2col copy: with the batch flattened to rows,
tap ``j`` of every output row ``r`` reads input row ``r + j``, so each tap is
one GEMM on a shifted view. Rows that straddle two samples are computed and
discarded.
"""
import numpy as np

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772


def conv1d_forward(x, w, b):
    k, c, o = w.shape
    n, length, _ = x.shape
    lo = length - k + 1
    rows = n * length - (k - 1)
    flat = x.reshape(n * length, c)
    full = np.empty((n * length, o), dtype=np.result_type(x, w))
    full[:rows] = flat[:rows] @ w[0]
    for tap in range(1, k):
        full[:rows] += flat[tap:tap + rows] @ w[tap]
    full[rows:] = 0
    out = full.reshape(n, length, o)[:, :lo]
    out += b
    return np.ascontiguousarray(out)


def conv1d_backward(x, w, g):
    k, c, o = w.shape
    n, length, _ = x.shape
    lo = length - k + 1
    rows = n * length - (k - 1)
    gpad = np.zeros((n, length, o), dtype=g.dtype)
    gpad[:, :lo] = g
    gflat = gpad.reshape(n * length, o)
    flat = x.reshape(n * length, c)
    gw = np.empty_like(w)
    gx = np.zeros((n * length, c), dtype=x.dtype)
    for tap in range(k):
        gw[tap] = flat[tap:tap + rows].T @ gflat[:rows]
        gx[tap:tap + rows] += gflat[:rows] @ w[tap].T
    gb = g.reshape(-1, o).sum(axis=0)
    return gx.reshape(n, length, c), gw, gb


def selu_forward(x):
    neg = (SELU_LAMBDA * SELU_ALPHA) * np.exp(np.minimum(x, 0))
    pos = x > 0
    out = np.where(pos, SELU_LAMBDA * x, neg - SELU_LAMBDA * SELU_ALPHA).astype(x.dtype, copy=False)
    der = np.where(pos, SELU_LAMBDA, neg).astype(x.dtype, copy=False)
    return out, der


def maxpool2_forward(x):
    n, length, c = x.shape
    lo = length // 2
    pairs = x[:, :2 * lo].reshape(n, lo, 2, c)
    second = pairs[:, :, 1] > pairs[:, :, 0]
    out = np.where(second, pairs[:, :, 1], pairs[:, :, 0])
    return out, second.astype(np.int8)


def maxpool2_backward(g, idx, length):
    n, lo, c = g.shape
    gx = np.zeros((n, length, c), dtype=g.dtype)
    gx[:, 0:2 * lo:2] = np.where(idx == 0, g, 0)
    gx[:, 1:2 * lo:2] = np.where(idx == 1, g, 0)
    return gx
