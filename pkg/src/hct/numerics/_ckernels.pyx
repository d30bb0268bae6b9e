# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled conv1d, SeLU and width-2 max-pool kernels (float32 and float64).

Arrays are ``(batch, length, channels)`` and C-contiguous. Output channels
are processed in blocks of ``BLOCK`` so the accumulators stay in registers.
"""
import numpy as np
from libc.math cimport exp, expf

ctypedef fused real:
    float
    double

DEF BLOCK = 8
cdef double SELU_LAMBDA = 1.0507009873554805
cdef double SELU_ALPHA = 1.6732632423543772


cdef inline real _exp(real v) noexcept nogil:
    if real is float:
        return expf(v)
    else:
        return exp(v)


def conv1d_forward(real[:, :, ::1] x, real[:, :, ::1] w, real[::1] b):
    cdef Py_ssize_t n = x.shape[0], length = x.shape[1], c = x.shape[2]
    cdef Py_ssize_t k = w.shape[0], o = w.shape[2]
    cdef Py_ssize_t lo = length - k + 1, kc = k * c
    cdef Py_ssize_t i, t, j, q, ob, oi
    cdef real xv
    cdef real acc[BLOCK]
    cdef real *orow
    cdef const real *xrow
    cdef const real *wp
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n, lo, o), dtype=dtype)
    cdef real[:, :, ::1] out = out_arr
    if n == 0 or lo <= 0 or o == 0:
        return out_arr
    cdef const real *wbase = &w[0, 0, 0]
    with nogil:
        for i in range(n):
            for t in range(lo):
                orow = &out[i, t, 0]
                # the window x[i, t:t+k, :] is one contiguous run of k*c values
                xrow = &x[i, t, 0]
                ob = 0
                while ob + BLOCK <= o:
                    for q in range(BLOCK):
                        acc[q] = b[ob + q]
                    for j in range(kc):
                        xv = xrow[j]
                        wp = wbase + j * o + ob
                        for q in range(BLOCK):
                            acc[q] += xv * wp[q]
                    for q in range(BLOCK):
                        orow[ob + q] = acc[q]
                    ob += BLOCK
                for oi in range(ob, o):
                    xv = b[oi]
                    for j in range(kc):
                        xv += xrow[j] * wbase[j * o + oi]
                    orow[oi] = xv
    return out_arr


def conv1d_backward(real[:, :, ::1] x, real[:, :, ::1] w, real[:, :, ::1] g):
    cdef Py_ssize_t n = x.shape[0], length = x.shape[1], c = x.shape[2]
    cdef Py_ssize_t k = w.shape[0], o = w.shape[2]
    cdef Py_ssize_t lo = length - k + 1, kc = k * c
    cdef Py_ssize_t i, t, j, oi
    cdef real xv, acc
    cdef const real *xrow
    cdef const real *grow
    cdef const real *wrow
    cdef real *gxrow
    cdef real *gwrow
    dtype = np.float32 if real is float else np.float64
    gx_arr = np.zeros((n, length, c), dtype=dtype)
    gw_arr = np.zeros((k, c, o), dtype=dtype)
    gb_arr = np.zeros(o, dtype=dtype)
    cdef real[:, :, ::1] gx = gx_arr
    cdef real[:, :, ::1] gw = gw_arr
    cdef real[::1] gb = gb_arr
    if n == 0 or lo <= 0 or o == 0:
        return gx_arr, gw_arr, gb_arr
    cdef const real *wbase = &w[0, 0, 0]
    cdef real *gwbase = &gw[0, 0, 0]
    with nogil:
        for i in range(n):
            for t in range(lo):
                xrow = &x[i, t, 0]
                grow = &g[i, t, 0]
                gxrow = &gx[i, t, 0]
                for oi in range(o):
                    gb[oi] += grow[oi]
                for j in range(kc):
                    xv = xrow[j]
                    gwrow = gwbase + j * o
                    wrow = wbase + j * o
                    acc = 0
                    for oi in range(o):
                        gwrow[oi] += xv * grow[oi]
                        acc = acc + grow[oi] * wrow[oi]
                    gxrow[j] += acc
    return gx_arr, gw_arr, gb_arr


def selu_forward(real[::1] x):
    """SeLU of a flat array and its derivative, in one pass."""
    cdef Py_ssize_t size = x.shape[0], i
    cdef real lam = <real>SELU_LAMBDA
    cdef real la = <real>(SELU_LAMBDA * SELU_ALPHA)
    cdef real v, e
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty(size, dtype=dtype)
    der_arr = np.empty(size, dtype=dtype)
    cdef real[::1] out = out_arr
    cdef real[::1] der = der_arr
    with nogil:
        for i in range(size):
            v = x[i]
            if v > 0:
                out[i] = lam * v
                der[i] = lam
            else:
                e = la * _exp(v)
                out[i] = e - la
                der[i] = e
    return out_arr, der_arr


def maxpool2_forward(real[:, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[2]
    cdef Py_ssize_t lo = x.shape[1] // 2
    cdef Py_ssize_t i, t, ci
    cdef real a, bv
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n, lo, c), dtype=dtype)
    idx_arr = np.empty((n, lo, c), dtype=np.int8)
    cdef real[:, :, ::1] out = out_arr
    cdef signed char[:, :, ::1] idx = idx_arr
    with nogil:
        for i in range(n):
            for t in range(lo):
                for ci in range(c):
                    a = x[i, 2 * t, ci]
                    bv = x[i, 2 * t + 1, ci]
                    if bv > a:
                        out[i, t, ci] = bv
                        idx[i, t, ci] = 1
                    else:
                        out[i, t, ci] = a
                        idx[i, t, ci] = 0
    return out_arr, idx_arr


def maxpool2_backward(real[:, :, ::1] g, signed char[:, :, ::1] idx, Py_ssize_t length):
    cdef Py_ssize_t n = g.shape[0], lo = g.shape[1], c = g.shape[2]
    cdef Py_ssize_t i, t, ci
    dtype = np.float32 if real is float else np.float64
    gx_arr = np.zeros((n, length, c), dtype=dtype)
    cdef real[:, :, ::1] gx = gx_arr
    with nogil:
        for i in range(n):
            for t in range(lo):
                for ci in range(c):
                    gx[i, 2 * t + idx[i, t, ci], ci] = g[i, t, ci]
    return gx_arr
