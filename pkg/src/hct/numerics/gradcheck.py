"""Central finite differences, the independent oracle for the tape gradients."""
from __future__ import annotations

import numpy as np

from hct.errors import OracleError


def finite_diff_gradient(fn, params, h=1e-4, coords=None):
    """Estimate ``d fn / d params`` by ``(fn(p+h) - fn(p-h)) / 2h`` per coordinate.

    Parameters are promoted to float64 before perturbation. With ``coords``
    (an iterable of ``(name, flat_index)``) only those entries are estimated
    and a dict keyed by the pairs is returned; otherwise a full gradient
    array per parameter.
    """
    work = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def evaluate():
        val = float(fn(work))
        if not np.isfinite(val):
            raise OracleError("objective returned a non-finite value")
        return val

    def partial(name, idx):
        flat = work[name].reshape(-1)
        keep = flat[idx]
        flat[idx] = keep + h
        up = evaluate()
        flat[idx] = keep - h
        down = evaluate()
        flat[idx] = keep
        return (up - down) / (2 * h)

    if coords is not None:
        return {(name, int(i)): partial(name, int(i)) for name, i in coords}
    out = {}
    for name, arr in work.items():
        g = np.zeros(arr.size)
        for i in range(arr.size):
            g[i] = partial(name, i)
        out[name] = g.reshape(arr.shape)
    return out


def sample_coordinates(params, count, rng):
    """Draw ``count`` distinct ``(name, flat_index)`` pairs, uniformly over all entries."""
    names = sorted(params)
    sizes = np.array([np.size(params[n]) for n in names])
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(count, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    coords = []
    for p in np.sort(picks):
        j = int(np.searchsorted(offsets, p, side="right") - 1)
        coords.append((names[j], int(p - offsets[j])))
    return coords


def relative_error(analytic, numeric, floor=1e-7):
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps exact zeros comparable."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
