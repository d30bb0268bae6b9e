import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hct.numerics import kernels
from hct.numerics.kernels import backends

BACKENDS = sorted(backends())


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@given(n=st.integers(1, 4), length=st.integers(3, 20), cin=st.integers(1, 5), cout=st.integers(1, 19),
       k=st.integers(1, 3), seed=st.integers(0, 2**31))
def test_conv_kernels_match_reference(backend, dtype, n, length, cin, cout, k, seed):
    impl = backends()[backend]
    r = np.random.default_rng(seed)
    x = r.standard_normal((n, length, cin)).astype(dtype)
    w = r.standard_normal((k, cin, cout)).astype(dtype)
    b = r.standard_normal(cout).astype(dtype)
    lo = length - k + 1
    g = r.standard_normal((n, lo, cout)).astype(dtype)
    x64, w64, g64 = x.astype(float), w.astype(float), g.astype(float)
    ref = b.astype(float) + sum(np.einsum("ntc,co->nto", x64[:, j:j + lo], w64[j]) for j in range(k))
    tol = 1e-4 if dtype == np.float32 else 1e-10
    out = impl.conv1d_forward(x, w, b)
    assert out.dtype == dtype
    np.testing.assert_allclose(out, ref, rtol=tol, atol=tol)
    gx, gw, gb = impl.conv1d_backward(x, w, g)
    ref_gw = np.stack([np.einsum("ntc,nto->co", x64[:, j:j + lo], g64) for j in range(k)])
    ref_gx = np.zeros_like(x64)
    for j in range(k):
        ref_gx[:, j:j + lo] += np.einsum("nto,co->ntc", g64, w64[j])
    np.testing.assert_allclose(gw, ref_gw, rtol=tol, atol=tol * 10)
    np.testing.assert_allclose(gx, ref_gx, rtol=tol, atol=tol * 10)
    np.testing.assert_allclose(gb, g64.sum(axis=(0, 1)), rtol=tol, atol=tol * 10)


@pytest.mark.parametrize("backend", BACKENDS)
@given(n=st.integers(1, 3), length=st.integers(2, 15), c=st.integers(1, 4), seed=st.integers(0, 2**31))
def test_pool_kernels(backend, n, length, c, seed):
    impl = backends()[backend]
    x = np.random.default_rng(seed).integers(-3, 3, (n, length, c)).astype(np.float32)  # ties included
    out, idx = impl.maxpool2_forward(x)
    lo = length // 2
    np.testing.assert_array_equal(out, np.maximum(x[:, 0:2 * lo:2], x[:, 1:2 * lo:2]))
    # ties resolve to the first element of the window
    np.testing.assert_array_equal(idx, (x[:, 1:2 * lo:2] > x[:, 0:2 * lo:2]).astype(np.int8))
    g = np.ones_like(out)
    gx = impl.maxpool2_backward(g, idx, length)
    assert gx.shape == x.shape
    assert gx.sum() == out.size


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_selu_kernel(backend, dtype):
    x = np.linspace(-20, 20, 1001).astype(dtype)
    out, der = backends()[backend].selu_forward(x)
    lam, alpha = 1.0507009873554805, 1.6732632423543772
    x64 = x.astype(float)
    tol = 1e-6 if dtype == np.float32 else 1e-13
    np.testing.assert_allclose(out, np.where(x64 > 0, lam * x64, lam * alpha * np.expm1(x64)), rtol=tol, atol=tol)
    np.testing.assert_allclose(der, np.where(x64 > 0, lam, lam * alpha * np.exp(x64)), rtol=tol, atol=tol)
    assert out.dtype == dtype and der.dtype == dtype


def test_backends_agree_on_model_shapes():
    if len(BACKENDS) < 2:
        pytest.skip("compiled kernels not built")
    r = np.random.default_rng(0)
    py, cy = backends()["python"], backends()["cython"]
    for length, cin, cout in [(100, 1, 8), (98, 8, 16), (48, 16, 16), (46, 16, 1)]:
        x = r.standard_normal((36, length, cin)).astype(np.float32)
        w = r.standard_normal((3, cin, cout)).astype(np.float32)
        b = r.standard_normal(cout).astype(np.float32)
        np.testing.assert_allclose(py.conv1d_forward(x, w, b), cy.conv1d_forward(x, w, b), rtol=1e-4, atol=1e-4)


def test_wrappers_accept_non_contiguous_input():
    x = np.asfortranarray(np.random.default_rng(0).standard_normal((2, 10, 3)))
    w = np.ones((3, 3, 8))
    out = kernels.conv1d_forward(x, w, np.zeros(8))
    assert out.shape == (2, 8, 8)
    out, der = kernels.selu_forward(x[:, ::2])
    assert out.shape == (2, 5, 3)


def test_environment_forces_python_fallback():
    code = "from hct.numerics import BACKEND; print(BACKEND)"
    env = dict(os.environ, HCT_KERNELS="python")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
