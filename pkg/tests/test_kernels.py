"""Both kernel backends must agree bit for bit; adjoint and reference checks."""
from __future__ import annotations

import numpy as np
import pytest

from lawm.kernels import _numba_impl as nb
from lawm.kernels import _numpy_impl as npk


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("shape,k,stride", [((2, 8, 8, 3), 4, 2), ((5, 16, 16, 4), 3, 1), ((1, 6, 6, 2), 2, 2)])
def test_im2col_backends_identical(dtype, shape, k, stride):
    x = np.random.default_rng(0).standard_normal(shape).astype(dtype)
    a = npk.im2col(x, k, stride)
    b = nb.im2col(x, k, stride)
    assert a.dtype == b.dtype == dtype
    assert np.array_equal(a, b)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_col2im_backends_identical(dtype):
    rng = np.random.default_rng(1)
    cols = rng.standard_normal((3, 7, 7, 4, 4, 5)).astype(dtype)
    a = npk.col2im_add(cols, 2, 16, 16)
    b = nb.col2im_add(cols, 2, 16, 16)
    assert np.array_equal(a, b)


def test_col2im_is_adjoint_of_im2col():
    # <im2col(x), C> == <x, col2im(C)> for every stride/kernel combo used
    rng = np.random.default_rng(2)
    for k, stride in [(4, 2), (3, 1)]:
        x = rng.standard_normal((2, 8, 8, 3))
        cols = npk.im2col(x, k, stride)
        c = rng.standard_normal(cols.shape)
        lhs = float((cols * c).sum())
        rhs = float((x * npk.col2im_add(c, stride, 8, 8)).sum())
        assert lhs == pytest.approx(rhs, rel=1e-12)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_adam_backends_identical_and_match_reference(dtype):
    rng = np.random.default_rng(3)
    p0 = rng.standard_normal(257).astype(dtype)
    g = rng.standard_normal(257).astype(dtype)
    m0 = rng.random(257).astype(dtype) * 0.1
    v0 = rng.random(257).astype(dtype) * 0.1
    args = (2e-3, 0.9, 0.999, 1e-8, 1 - 0.9**3, 1 - 0.999**3)

    p1, m1, v1 = p0.copy(), m0.copy(), v0.copy()
    npk.adam_step(p1, g, m1, v1, *args)
    p2, m2, v2 = p0.copy(), m0.copy(), v0.copy()
    nb.adam_step(p2, g, m2, v2, *args)
    assert np.array_equal(p1, p2) and np.array_equal(m1, m2) and np.array_equal(v1, v2)

    # independent float64 reference
    lr, b1, b2, eps, bc1, bc2 = args
    m_ref = b1 * m0.astype(np.float64) + (1 - b1) * g.astype(np.float64)
    v_ref = b2 * v0.astype(np.float64) + (1 - b2) * g.astype(np.float64) ** 2
    p_ref = p0.astype(np.float64) - lr * (m_ref / bc1) / (np.sqrt(v_ref / bc2) + eps)
    tol = 1e-5 if dtype == np.float32 else 1e-12
    np.testing.assert_allclose(p1, p_ref, rtol=tol, atol=tol)


@pytest.mark.parametrize("prim,args", [
    ("fill_disc", (9.3, 30.7, 7.2)),
    ("fill_disc", (-3.0, 70.0, 10.0)),  # partially off-canvas
    ("fill_rect", (20.0, 20.0, 3.5, 5.5)),
    ("fill_segment", (4.0, 4.0, 60.0, 40.0, 1.4)),
    ("fill_segment", (10.0, 10.0, 10.0, 10.0, 2.0)),  # degenerate: a dot
])
def test_raster_backends_identical(prim, args):
    color = np.array([0.2, 0.9, 0.4], dtype=np.float32)
    img1 = np.zeros((64, 64, 3), dtype=np.float32)
    img2 = np.zeros((64, 64, 3), dtype=np.float32)
    getattr(npk, prim)(img1, *args, color)
    getattr(nb, prim)(img2, *args, color)
    assert np.array_equal(img1, img2)
    if args[0] >= 0:  # fully on-canvas cases must paint something
        assert img1.sum() > 0


def test_backend_selection_env(monkeypatch):
    import lawm.kernels as K

    assert K.BACKEND in ("numba", "numpy")
    assert K.im2col is (nb.im2col if K.BACKEND == "numba" else npk.im2col)
