"""Compiled backend: array prep in Python, inner loops in the Cython core."""

import numpy as np

from . import _core


def _two_d(x):
    return np.ascontiguousarray(x).reshape(-1, x.shape[-1])


def softmax_fwd(x):
    x2 = _two_d(x)
    out = np.empty_like(x2)
    if x2.dtype == np.float32:
        _core._softmax_fwd_f32(x2, out)
    else:
        _core._softmax_fwd_f64(x2, out)
    return out.reshape(x.shape)


def softmax_bwd(y, gy):
    y2 = _two_d(y)
    gy2 = np.ascontiguousarray(gy, dtype=y2.dtype).reshape(y2.shape)
    gx = np.empty_like(y2)
    if y2.dtype == np.float32:
        _core._softmax_bwd_f32(y2, gy2, gx)
    else:
        _core._softmax_bwd_f64(y2, gy2, gx)
    return gx.reshape(y.shape)


def layernorm_fwd(x, gain, bias, eps):
    x2 = _two_d(x)
    y = np.empty_like(x2)
    xhat = np.empty_like(x2)
    rstd = np.empty(x2.shape[0], dtype=x2.dtype)
    gain = np.ascontiguousarray(gain)
    bias = np.ascontiguousarray(bias)
    if x2.dtype == np.float32:
        _core._layernorm_fwd_f32(x2, gain, bias, eps, y, xhat, rstd)
    else:
        _core._layernorm_fwd_f64(x2, gain, bias, eps, y, xhat, rstd)
    shape = x.shape
    return y.reshape(shape), xhat.reshape(shape), rstd.reshape(shape[:-1] + (1,))


def layernorm_bwd(gy, xhat, rstd, gain):
    gy2 = _two_d(gy)
    xhat2 = np.ascontiguousarray(xhat).reshape(gy2.shape)
    rstd1 = np.ascontiguousarray(rstd).reshape(-1)
    gain = np.ascontiguousarray(gain)
    d = gy2.shape[-1]
    gx = np.empty_like(gy2)
    dgain = np.zeros(d, dtype=gy2.dtype)
    dbias = np.zeros(d, dtype=gy2.dtype)
    if gy2.dtype == np.float32:
        _core._layernorm_bwd_f32(gy2, xhat2, rstd1, gain, gx, dgain, dbias)
    else:
        _core._layernorm_bwd_f64(gy2, xhat2, rstd1, gain, gx, dgain, dbias)
    return gx.reshape(gy.shape), dgain, dbias


def bilinear_warp(img, flow):
    img = np.ascontiguousarray(img)
    flow = np.ascontiguousarray(flow.astype(img.dtype, copy=False))
    out = np.empty_like(img)
    if img.dtype == np.float32:
        _core._bilinear_warp_f32(img, flow, out)
    else:
        _core._bilinear_warp_f64(img, flow, out)
    return out


def im2col(x, kh, kw, stride, pad):
    x = np.ascontiguousarray(x)
    b, h, w, c = x.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((b, oh, ow, kh * kw * c), dtype=x.dtype)
    if x.dtype == np.float32:
        _core._im2col_f32(x, out, kh, kw, stride, pad, oh, ow)
    else:
        _core._im2col_f64(x, out, kh, kw, stride, pad, oh, ow)
    return out


def col2im(cols, x_shape, kh, kw, stride, pad):
    b, h, w, c = x_shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    cols = np.ascontiguousarray(cols).reshape(b, oh, ow, kh * kw * c)
    out = np.zeros((b, h, w, c), dtype=cols.dtype)
    if cols.dtype == np.float32:
        _core._col2im_f32(cols, out, kh, kw, stride, pad, oh, ow)
    else:
        _core._col2im_f64(cols, out, kh, kw, stride, pad, oh, ow)
    return out
