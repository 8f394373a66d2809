"""Pure numpy implementations of the hot kernels.

Shapes are normalized by the callers in ``tensor.py``; every function here
receives contiguous arrays and returns freshly allocated ones. The compiled
backend in ``_core.pyx`` mirrors these signatures exactly.
"""

import numpy as np


def softmax_fwd(x):
    """Stable softmax over the last axis. x: (rows, n)."""
    m = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_bwd(y, gy):
    """Jacobian-vector product of softmax: gx = y * (gy - sum(gy*y))."""
    inner = np.sum(gy * y, axis=-1, keepdims=True)
    return y * (gy - inner)


def layernorm_fwd(x, gain, bias, eps):
    """Per-row normalization with affine. x: (rows, d). Returns (y, xhat, rstd)."""
    mu = np.mean(x, axis=-1, keepdims=True)
    var = np.mean((x - mu) ** 2, axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * rstd
    return xhat * gain + bias, xhat, rstd


def layernorm_bwd(gy, xhat, rstd, gain):
    """Backward of layernorm_fwd. Returns (gx, dgain, dbias)."""
    gxhat = gy * gain
    m1 = np.mean(gxhat, axis=-1, keepdims=True)
    m2 = np.mean(gxhat * xhat, axis=-1, keepdims=True)
    gx = rstd * (gxhat - m1 - xhat * m2)
    return gx, np.sum(gy * xhat, axis=0), np.sum(gy, axis=0)


def bilinear_warp(img, flow):
    """Backward-warp img by flow: out[i,j] = img(i + flow[i,j,1], j + flow[i,j,0]).

    flow channels are (dx, dy); sampling clamps to the image border.
    img: (H, W, C), flow: (H, W, 2).
    """
    h, w = img.shape[:2]
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    x = jj + flow[..., 0]
    y = ii + flow[..., 1]
    x0 = np.clip(np.floor(x).astype(np.int64), 0, w - 1)
    y0 = np.clip(np.floor(y).astype(np.int64), 0, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = np.clip(x, 0, w - 1) - x0
    fy = np.clip(y, 0, h - 1) - y0
    fx = fx[..., None]
    fy = fy[..., None]
    out = (
        img[y0, x0] * (1 - fy) * (1 - fx)
        + img[y0, x1] * (1 - fy) * fx
        + img[y1, x0] * fy * (1 - fx)
        + img[y1, x1] * fy * fx
    )
    return out.astype(img.dtype, copy=False)


def im2col(x, kh, kw, stride, pad):
    """Extract conv patches. x: (B, H, W, C) -> (B, OH, OW, kh*kw*C)."""
    b, h, w, c = x.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    cols = np.empty((b, oh, ow, kh, kw, c), dtype=x.dtype)
    for di in range(kh):
        for dj in range(kw):
            cols[:, :, :, di, dj, :] = x[
                :, di : di + oh * stride : stride, dj : dj + ow * stride : stride, :
            ]
    return cols.reshape(b, oh, ow, kh * kw * c)


def col2im(cols, x_shape, kh, kw, stride, pad):
    """Adjoint of im2col: scatter-add patches back. Returns (B, H, W, C)."""
    b, h, w, c = x_shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    cols = cols.reshape(b, oh, ow, kh, kw, c)
    out = np.zeros((b, h + 2 * pad, w + 2 * pad, c), dtype=cols.dtype)
    for di in range(kh):
        for dj in range(kw):
            out[:, di : di + oh * stride : stride, dj : dj + ow * stride : stride, :] += cols[
                :, :, :, di, dj, :
            ]
    if pad:
        out = out[:, pad : pad + h, pad : pad + w, :]
    return out
