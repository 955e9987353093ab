import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import loop_conv2d
from seng import _kernels_py as py
from seng import kernels

try:
    from seng import _kernels as cy
except ImportError:  # extension not built
    cy = None

needs_ext = pytest.mark.skipif(cy is None, reason="compiled kernels not built")


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")
    if cy is not None:
        assert kernels.BACKEND == "cython" or kernels.im2col is py.im2col


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (2, 0)])
def test_im2col_matches_loop_convolution(stride, padding):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 7, 6))
    W = rng.standard_normal((4, 3 * 3 * 3))
    cols = kernels.im2col(x, 3, 3, stride, padding)
    y = np.matmul(W, cols)
    ref = loop_conv2d(x, W, 3, stride, padding)
    np.testing.assert_allclose(y.reshape(ref.shape), ref, rtol=1e-12, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(3, 8), st.integers(1, 3),
       st.integers(1, 2), st.integers(0, 1), st.integers(0, 2**31 - 1))
def test_col2im_is_adjoint_of_im2col(b, c, h, k, stride, padding, seed):
    if h + 2 * padding < k:
        return
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((b, c, h, h))
    cols = kernels.im2col(x, k, k, stride, padding)
    y = rng.standard_normal(cols.shape)
    lhs = np.sum(cols * y)
    rhs = np.sum(x * kernels.col2im(y, x.shape, k, k, stride, padding))
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def _random_banks(rng, p=5, ng=6, na=7, r=3):
    return rng.standard_normal((p, ng, r)), rng.standard_normal((p, na, r))


def test_factor_gram_matches_materialized_products():
    rng = np.random.default_rng(1)
    G, A = _random_banks(rng)
    U = np.stack([(G[i] @ A[i].T).ravel() for i in range(len(G))], axis=1)
    np.testing.assert_allclose(kernels.factor_gram(G, A, G, A), U.T @ U, rtol=1e-12, atol=1e-12)
    G2, A2 = _random_banks(rng, p=4)
    U2 = np.stack([(G2[i] @ A2[i].T).ravel() for i in range(4)], axis=1)
    np.testing.assert_allclose(kernels.factor_gram(G, A, G2, A2), U.T @ U2, rtol=1e-12, atol=1e-12)


def test_factor_dot_matches_materialized_products():
    rng = np.random.default_rng(2)
    G, A = _random_banks(rng)
    Z = rng.standard_normal((6, 7))
    U = np.stack([(G[i] @ A[i].T).ravel() for i in range(len(G))], axis=1)
    np.testing.assert_allclose(kernels.factor_dot(G, A, Z), U.T @ Z.ravel(), rtol=1e-12, atol=1e-12)


@needs_ext
@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 8), st.integers(1, 8), st.integers(1, 4),
       st.integers(0, 2**31 - 1))
def test_backends_agree_on_factor_kernels(p, ng, na, r, seed):
    rng = np.random.default_rng(seed)
    G, A = _random_banks(rng, p, ng, na, r)
    Z = rng.standard_normal((ng, na))
    np.testing.assert_allclose(cy.factor_gram(G, A, G, A), py.factor_gram(G, A, G, A),
                               rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(cy.factor_dot(G, A, Z), py.factor_dot(G, A, Z),
                               rtol=1e-12, atol=1e-12)


@needs_ext
@pytest.mark.parametrize("stride,padding", [(1, 0), (2, 1), (3, 2)])
def test_backends_agree_bitwise_on_im2col(stride, padding):
    rng = np.random.default_rng(4)
    x = rng.standard_normal((3, 2, 9, 8))
    a, b = cy.im2col(x, 3, 3, stride, padding), py.im2col(x, 3, 3, stride, padding)
    assert a.tobytes() == b.tobytes()
    y = rng.standard_normal(a.shape)
    np.testing.assert_array_equal(cy.col2im(y, x.shape, 3, 3, stride, padding),
                                  py.col2im(y, x.shape, 3, 3, stride, padding))


def test_pure_python_fallback_selected_by_environment():
    import subprocess
    import sys
    import os
    env = dict(os.environ, SENG_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import seng.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
