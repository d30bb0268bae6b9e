"""Backend selection for the conv, SeLU and pooling hot loops.

The compiled Cython module is used when it was built; otherwise the numpy
implementation is loaded. Set ``HCT_KERNELS=python`` to force the fallback.
"""
import os

import numpy as np

from hct.numerics import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("HCT_KERNELS", "").lower() != "python":
    try:
        from hct.numerics import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        pass


def backends():
    """Return the kernel modules importable in this environment, by name."""
    found = {"python": _pykernels}
    try:
        from hct.numerics import _ckernels
        found["cython"] = _ckernels
    except ImportError:
        pass
    return found


def _c(a):
    return np.ascontiguousarray(a)


# Routing measured with benchmarks/bench_kernels.py: the compiled conv keeps
# its accumulators in registers only for blocks of 8 output channels, and the
# numpy path's shifted GEMMs win the backward pass once both channel counts
# exceed one.
_BLOCK = 8


def conv1d_forward(x, w, b):
    impl = _impl if w.shape[2] >= _BLOCK else _pykernels
    return impl.conv1d_forward(_c(x), _c(w), _c(b))


def conv1d_backward(x, w, g):
    impl = _impl if w.shape[1] == 1 else _pykernels
    return impl.conv1d_backward(_c(x), _c(w), _c(g))


def selu_forward(x):
    """SeLU of any-shaped ``x`` plus its derivative (same shape)."""
    x = np.asarray(x)
    out, der = _impl.selu_forward(_c(x).reshape(-1))
    return out.reshape(x.shape), der.reshape(x.shape)


def maxpool2_forward(x):
    return _impl.maxpool2_forward(_c(x))


def maxpool2_backward(g, idx, length):
    return _impl.maxpool2_backward(_c(g), _c(idx), length)
