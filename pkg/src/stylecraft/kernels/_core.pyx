# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Typed inner loops for the compiled kernel backend.

Array preparation (contiguity, reshapes, output allocation) lives in
``accel.py``; these functions only run the loops. f32 and f64 variants are
written out separately.
"""

from libc.math cimport exp, sqrt, floor


def _softmax_fwd_f32(float[:, ::1] x, float[:, ::1] out):
    cdef Py_ssize_t r, j, rows = x.shape[0], n = x.shape[1]
    cdef float m, s
    with nogil:
        for r in range(rows):
            m = x[r, 0]
            for j in range(1, n):
                if x[r, j] > m:
                    m = x[r, j]
            s = 0
            for j in range(n):
                out[r, j] = <float>exp(x[r, j] - m)
                s += out[r, j]
            for j in range(n):
                out[r, j] /= s


def _softmax_fwd_f64(double[:, ::1] x, double[:, ::1] out):
    cdef Py_ssize_t r, j, rows = x.shape[0], n = x.shape[1]
    cdef double m, s
    with nogil:
        for r in range(rows):
            m = x[r, 0]
            for j in range(1, n):
                if x[r, j] > m:
                    m = x[r, j]
            s = 0
            for j in range(n):
                out[r, j] = exp(x[r, j] - m)
                s += out[r, j]
            for j in range(n):
                out[r, j] /= s


def _softmax_bwd_f32(float[:, ::1] y, float[:, ::1] gy, float[:, ::1] gx):
    cdef Py_ssize_t r, j, rows = y.shape[0], n = y.shape[1]
    cdef float inner
    with nogil:
        for r in range(rows):
            inner = 0
            for j in range(n):
                inner += gy[r, j] * y[r, j]
            for j in range(n):
                gx[r, j] = y[r, j] * (gy[r, j] - inner)


def _softmax_bwd_f64(double[:, ::1] y, double[:, ::1] gy, double[:, ::1] gx):
    cdef Py_ssize_t r, j, rows = y.shape[0], n = y.shape[1]
    cdef double inner
    with nogil:
        for r in range(rows):
            inner = 0
            for j in range(n):
                inner += gy[r, j] * y[r, j]
            for j in range(n):
                gx[r, j] = y[r, j] * (gy[r, j] - inner)


def _layernorm_fwd_f32(float[:, ::1] x, float[::1] gain, float[::1] bias, double eps,
                       float[:, ::1] y, float[:, ::1] xhat, float[::1] rstd):
    cdef Py_ssize_t r, j, rows = x.shape[0], d = x.shape[1]
    cdef double mu, var, rs
    with nogil:
        for r in range(rows):
            mu = 0
            for j in range(d):
                mu += x[r, j]
            mu /= d
            var = 0
            for j in range(d):
                var += (x[r, j] - mu) * (x[r, j] - mu)
            var /= d
            rs = 1.0 / sqrt(var + eps)
            rstd[r] = <float>rs
            for j in range(d):
                xhat[r, j] = <float>((x[r, j] - mu) * rs)
                y[r, j] = xhat[r, j] * gain[j] + bias[j]


def _layernorm_fwd_f64(double[:, ::1] x, double[::1] gain, double[::1] bias, double eps,
                       double[:, ::1] y, double[:, ::1] xhat, double[::1] rstd):
    cdef Py_ssize_t r, j, rows = x.shape[0], d = x.shape[1]
    cdef double mu, var, rs
    with nogil:
        for r in range(rows):
            mu = 0
            for j in range(d):
                mu += x[r, j]
            mu /= d
            var = 0
            for j in range(d):
                var += (x[r, j] - mu) * (x[r, j] - mu)
            var /= d
            rs = 1.0 / sqrt(var + eps)
            rstd[r] = rs
            for j in range(d):
                xhat[r, j] = (x[r, j] - mu) * rs
                y[r, j] = xhat[r, j] * gain[j] + bias[j]


def _layernorm_bwd_f32(float[:, ::1] gy, float[:, ::1] xhat, float[::1] rstd, float[::1] gain,
                       float[:, ::1] gx, float[::1] dgain, float[::1] dbias):
    cdef Py_ssize_t r, j, rows = gy.shape[0], d = gy.shape[1]
    cdef double m1, m2, g
    with nogil:
        for r in range(rows):
            m1 = 0
            m2 = 0
            for j in range(d):
                g = gy[r, j] * gain[j]
                m1 += g
                m2 += g * xhat[r, j]
            m1 /= d
            m2 /= d
            for j in range(d):
                gx[r, j] = <float>(rstd[r] * (gy[r, j] * gain[j] - m1 - xhat[r, j] * m2))
                dgain[j] += gy[r, j] * xhat[r, j]
                dbias[j] += gy[r, j]


def _layernorm_bwd_f64(double[:, ::1] gy, double[:, ::1] xhat, double[::1] rstd, double[::1] gain,
                       double[:, ::1] gx, double[::1] dgain, double[::1] dbias):
    cdef Py_ssize_t r, j, rows = gy.shape[0], d = gy.shape[1]
    cdef double m1, m2, g
    with nogil:
        for r in range(rows):
            m1 = 0
            m2 = 0
            for j in range(d):
                g = gy[r, j] * gain[j]
                m1 += g
                m2 += g * xhat[r, j]
            m1 /= d
            m2 /= d
            for j in range(d):
                gx[r, j] = rstd[r] * (gy[r, j] * gain[j] - m1 - xhat[r, j] * m2)
                dgain[j] += gy[r, j] * xhat[r, j]
                dbias[j] += gy[r, j]


def _bilinear_warp_f32(float[:, :, ::1] img, float[:, :, ::1] flow, float[:, :, ::1] out):
    cdef Py_ssize_t i, j, c, h = img.shape[0], w = img.shape[1], ch = img.shape[2]
    cdef Py_ssize_t x0, y0, x1, y1
    cdef double x, y, fx, fy
    with nogil:
        for i in range(h):
            for j in range(w):
                x = j + flow[i, j, 0]
                y = i + flow[i, j, 1]
                if x < 0:
                    x = 0
                if x > w - 1:
                    x = w - 1
                if y < 0:
                    y = 0
                if y > h - 1:
                    y = h - 1
                x0 = <Py_ssize_t>floor(x)
                y0 = <Py_ssize_t>floor(y)
                if x0 > w - 1:
                    x0 = w - 1
                if y0 > h - 1:
                    y0 = h - 1
                x1 = x0 + 1 if x0 + 1 < w else w - 1
                y1 = y0 + 1 if y0 + 1 < h else h - 1
                fx = x - x0
                fy = y - y0
                for c in range(ch):
                    out[i, j, c] = <float>(
                        img[y0, x0, c] * (1 - fy) * (1 - fx)
                        + img[y0, x1, c] * (1 - fy) * fx
                        + img[y1, x0, c] * fy * (1 - fx)
                        + img[y1, x1, c] * fy * fx
                    )


def _bilinear_warp_f64(double[:, :, ::1] img, double[:, :, ::1] flow, double[:, :, ::1] out):
    cdef Py_ssize_t i, j, c, h = img.shape[0], w = img.shape[1], ch = img.shape[2]
    cdef Py_ssize_t x0, y0, x1, y1
    cdef double x, y, fx, fy
    with nogil:
        for i in range(h):
            for j in range(w):
                x = j + flow[i, j, 0]
                y = i + flow[i, j, 1]
                if x < 0:
                    x = 0
                if x > w - 1:
                    x = w - 1
                if y < 0:
                    y = 0
                if y > h - 1:
                    y = h - 1
                x0 = <Py_ssize_t>floor(x)
                y0 = <Py_ssize_t>floor(y)
                if x0 > w - 1:
                    x0 = w - 1
                if y0 > h - 1:
                    y0 = h - 1
                x1 = x0 + 1 if x0 + 1 < w else w - 1
                y1 = y0 + 1 if y0 + 1 < h else h - 1
                fx = x - x0
                fy = y - y0
                for c in range(ch):
                    out[i, j, c] = (
                        img[y0, x0, c] * (1 - fy) * (1 - fx)
                        + img[y0, x1, c] * (1 - fy) * fx
                        + img[y1, x0, c] * fy * (1 - fx)
                        + img[y1, x1, c] * fy * fx
                    )


def _im2col_f32(float[:, :, :, ::1] x, float[:, :, :, ::1] out,
                Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride, Py_ssize_t pad,
                Py_ssize_t oh, Py_ssize_t ow):
    cdef Py_ssize_t b = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t n, i, j, di, dj, ch, si, sj, col
    with nogil:
        for n in range(b):
            for i in range(oh):
                for j in range(ow):
                    col = 0
                    for di in range(kh):
                        si = i * stride + di - pad
                        for dj in range(kw):
                            sj = j * stride + dj - pad
                            if 0 <= si < h and 0 <= sj < w:
                                for ch in range(c):
                                    out[n, i, j, col + ch] = x[n, si, sj, ch]
                            col += c


def _im2col_f64(double[:, :, :, ::1] x, double[:, :, :, ::1] out,
                Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride, Py_ssize_t pad,
                Py_ssize_t oh, Py_ssize_t ow):
    cdef Py_ssize_t b = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t n, i, j, di, dj, ch, si, sj, col
    with nogil:
        for n in range(b):
            for i in range(oh):
                for j in range(ow):
                    col = 0
                    for di in range(kh):
                        si = i * stride + di - pad
                        for dj in range(kw):
                            sj = j * stride + dj - pad
                            if 0 <= si < h and 0 <= sj < w:
                                for ch in range(c):
                                    out[n, i, j, col + ch] = x[n, si, sj, ch]
                            col += c


def _col2im_f32(float[:, :, :, ::1] cols, float[:, :, :, ::1] out,
                Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride, Py_ssize_t pad,
                Py_ssize_t oh, Py_ssize_t ow):
    cdef Py_ssize_t b = out.shape[0], h = out.shape[1], w = out.shape[2], c = out.shape[3]
    cdef Py_ssize_t n, i, j, di, dj, ch, si, sj, col
    with nogil:
        for n in range(b):
            for i in range(oh):
                for j in range(ow):
                    col = 0
                    for di in range(kh):
                        si = i * stride + di - pad
                        for dj in range(kw):
                            sj = j * stride + dj - pad
                            if 0 <= si < h and 0 <= sj < w:
                                for ch in range(c):
                                    out[n, si, sj, ch] += cols[n, i, j, col + ch]
                            col += c


def _col2im_f64(double[:, :, :, ::1] cols, double[:, :, :, ::1] out,
                Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride, Py_ssize_t pad,
                Py_ssize_t oh, Py_ssize_t ow):
    cdef Py_ssize_t b = out.shape[0], h = out.shape[1], w = out.shape[2], c = out.shape[3]
    cdef Py_ssize_t n, i, j, di, dj, ch, si, sj, col
    with nogil:
        for n in range(b):
            for i in range(oh):
                for j in range(ow):
                    col = 0
                    for di in range(kh):
                        si = i * stride + di - pad
                        for dj in range(kw):
                            sj = j * stride + dj - pad
                            if 0 <= si < h and 0 <= sj < w:
                                for ch in range(c):
                                    out[n, si, sj, ch] += cols[n, i, j, col + ch]
                            col += c
