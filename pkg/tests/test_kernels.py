"""Backend equivalence: compiled kernels must match the numpy fallback."""

import numpy as np
import pytest

from stylecraft import kernels
from stylecraft.kernels import fallback

compiled = pytest.importorskip("stylecraft.kernels.accel", reason="compiled core not built")

DTYPES = [np.float32, np.float64]


def tol(dt):
    return 1e-5 if dt == np.float32 else 1e-12


@pytest.mark.parametrize("dt", DTYPES)
@pytest.mark.parametrize("shape", [(1, 1), (4, 7), (2, 3, 9), (64, 64)])
def test_softmax_agrees(dt, shape):
    rng = np.random.default_rng(0)
    x = (rng.standard_normal(shape) * 20).astype(dt)
    assert np.allclose(compiled.softmax_fwd(x), fallback.softmax_fwd(x), atol=tol(dt))
    y = fallback.softmax_fwd(x)
    gy = rng.standard_normal(shape).astype(dt)
    assert np.allclose(compiled.softmax_bwd(y, gy), fallback.softmax_bwd(y, gy), atol=tol(dt))


@pytest.mark.parametrize("dt", DTYPES)
def test_layernorm_agrees(dt):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((6, 16)).astype(dt)
    g = (rng.standard_normal(16) + 1).astype(dt)
    b = rng.standard_normal(16).astype(dt)
    y1, xh1, rs1 = compiled.layernorm_fwd(x, g, b, 1e-5)
    y2, xh2, rs2 = fallback.layernorm_fwd(x, g, b, 1e-5)
    assert np.allclose(y1, y2, atol=10 * tol(dt))
    assert np.allclose(rs1, rs2, atol=10 * tol(dt))
    gy = rng.standard_normal((6, 16)).astype(dt)
    gx1, dg1, db1 = compiled.layernorm_bwd(gy, xh1, rs1, g)
    gx2, dg2, db2 = fallback.layernorm_bwd(gy, xh2, rs2, g)
    assert np.allclose(gx1, gx2, atol=10 * tol(dt))
    assert np.allclose(dg1, dg2, atol=10 * tol(dt))
    assert np.allclose(db1, db2, atol=10 * tol(dt))


@pytest.mark.parametrize("dt", DTYPES)
def test_warp_agrees(dt):
    rng = np.random.default_rng(2)
    img = rng.random((9, 11, 3)).astype(dt)
    flow = ((rng.random((9, 11, 2)) - 0.5) * 6).astype(dt)
    assert np.allclose(compiled.bilinear_warp(img, flow), fallback.bilinear_warp(img, flow), atol=tol(dt))


@pytest.mark.parametrize("dt", DTYPES)
@pytest.mark.parametrize("k,stride,pad", [(4, 2, 1), (3, 1, 1), (2, 2, 0)])
def test_im2col_col2im_agree(dt, k, stride, pad):
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 8, 8, 3)).astype(dt)
    c1 = compiled.im2col(x, k, k, stride, pad)
    c2 = fallback.im2col(x, k, k, stride, pad)
    assert np.array_equal(c1, c2)
    assert np.allclose(
        compiled.col2im(c1, x.shape, k, k, stride, pad),
        fallback.col2im(c2, x.shape, k, k, stride, pad),
        atol=tol(dt),
    )


def test_backend_reports_choice():
    assert kernels.BACKEND in ("compiled", "python")
