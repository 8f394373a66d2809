"""Dense tensors with reverse-mode automatic differentiation.

A ``Tape`` records every primitive op in execution order; replaying the
adjoints in reverse yields gradients. Values are float32 by default, with a
float64 mode (pass ``dtype``) used by gradient checking. Arrays are row-major
numpy; broadcasting follows numpy rules with gradients reduced back to the
operand shapes.
"""

from __future__ import annotations

import numpy as np

from . import kernels

DEFAULT_DTYPE = np.float32

_active_tape = None


class ShapeMismatchError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


class Tensor:
    """N-dimensional array participating in the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad")
    __array_priority__ = 100  # keep numpy from hijacking reflected operators

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype or DEFAULT_DTYPE)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.item())

    def detach(self):
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    def astype(self, dtype):
        t = Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, dtype=dtype)
        return t

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, grad={self.requires_grad})"

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division not supported; use reciprocal kernels")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


class Tape:
    """Ordered record of executed primitive ops (input order = topological)."""

    def __init__(self):
        self.ops = []
        self._saved = None

    def __enter__(self):
        global _active_tape
        self._saved = _active_tape
        _active_tape = self
        return self

    def __exit__(self, *exc):
        global _active_tape
        _active_tape = self._saved
        return False

    def backward(self, loss):
        """Seed d(loss)=1 and replay adjoints in reverse op order."""
        if loss.data.size != 1:
            raise ShapeMismatchError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for out, back in reversed(self.ops):
            if out.grad is None:
                continue
            back(out.grad)


class no_grad:
    def __enter__(self):
        global _active_tape
        self._saved = _active_tape
        _active_tape = None

    def __exit__(self, *exc):
        global _active_tape
        _active_tape = self._saved
        return False


def _record(out, inputs, back):
    tape = _active_tape
    if tape is None:
        return out
    if any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.ops.append((out, back))
    return out


def _accum(t, g):
    if not (isinstance(t, Tensor) and t.requires_grad):
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g, shape):
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _coerce(a, b):
    """Promote python scalars to the tensor operand's dtype."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, Tensor(np.asarray(b, dtype=a.data.dtype), dtype=a.data.dtype)
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return Tensor(np.asarray(a, dtype=b.data.dtype), dtype=b.data.dtype), b
    if a.data.dtype != b.data.dtype:
        raise TypeError(f"mixed dtypes {a.data.dtype} / {b.data.dtype}")
    return a, b


# -- elementwise ops -------------------------------------------------------

def add(a, b):
    a, b = _coerce(a, b)
    out = Tensor(a.data + b.data, dtype=a.data.dtype)

    def back(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _record(out, (a, b), back)


def sub(a, b):
    a, b = _coerce(a, b)
    out = Tensor(a.data - b.data, dtype=a.data.dtype)

    def back(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, -_unbroadcast(g, b.shape))

    return _record(out, (a, b), back)


def mul(a, b):
    a, b = _coerce(a, b)
    out = Tensor(a.data * b.data, dtype=a.data.dtype)

    def back(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _record(out, (a, b), back)


def exp(a):
    out = Tensor(np.exp(a.data), dtype=a.data.dtype)

    def back(g):
        _accum(a, g * out.data)

    return _record(out, (a,), back)


def sqrt(a):
    out = Tensor(np.sqrt(a.data), dtype=a.data.dtype)

    def back(g):
        _accum(a, g * (0.5 / out.data))

    return _record(out, (a,), back)


def sigmoid(a):
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(s, dtype=a.data.dtype)

    def back(g):
        _accum(a, g * out.data * (1.0 - out.data))

    return _record(out, (a,), back)


def silu(a):
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(a.data * s, dtype=a.data.dtype)

    def back(g):
        _accum(a, g * (s * (1.0 + a.data * (1.0 - s))))

    return _record(out, (a,), back)


# -- shape ops -------------------------------------------------------------

def reshape(a, shape):
    out = Tensor(a.data.reshape(shape), dtype=a.data.dtype)

    def back(g):
        _accum(a, g.reshape(a.shape))

    return _record(out, (a,), back)


def permute(a, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(np.ascontiguousarray(a.data.transpose(axes)), dtype=a.data.dtype)

    def back(g):
        _accum(a, np.ascontiguousarray(g.transpose(inv)))

    return _record(out, (a,), back)


def swap_last2(a):
    axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    return permute(a, axes)


def concat(tensors, axis):
    dtype = tensors[0].data.dtype
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), dtype=dtype)
    sizes = [t.shape[axis] for t in tensors]

    def back(g):
        offset = 0
        for t, n in zip(tensors, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offset, offset + n)
            _accum(t, g[tuple(idx)])
            offset += n

    return _record(out, tuple(tensors), back)


def narrow(a, axis, start, length):
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Tensor(np.ascontiguousarray(a.data[idx]), dtype=a.data.dtype)

    def back(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        _accum(a, full)

    return _record(out, (a,), back)


def expand(a, shape):
    """Broadcast to an explicit shape (gradient sums the broadcast axes)."""
    out = Tensor(np.ascontiguousarray(np.broadcast_to(a.data, shape)), dtype=a.data.dtype)

    def back(g):
        _accum(a, _unbroadcast(g, a.shape))

    return _record(out, (a,), back)


def tsum(a, axis=None, keepdims=False):
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), dtype=a.data.dtype)

    def back(g):
        if axis is None:
            _accum(a, np.broadcast_to(g.reshape((1,) * a.ndim), a.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape).copy())

    return _record(out, (a,), back)


def tmean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -- linear algebra --------------------------------------------------------

def matmul(a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatchError(f"matmul needs 2-D+ operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    a, b = _coerce(a, b)
    out = Tensor(np.matmul(a.data, b.data), dtype=a.data.dtype)

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        _accum(a, _unbroadcast(ga, a.shape))
        _accum(b, _unbroadcast(gb, b.shape))

    return _record(out, (a, b), back)


def softmax(a, axis=-1):
    """Max-subtracted softmax along ``axis``; each slice sums to 1."""
    if axis not in (-1, a.ndim - 1):
        moved = permute(a, _axis_to_last(a.ndim, axis))
        return permute(softmax(moved, -1), _axis_to_last(a.ndim, axis))
    y = kernels.softmax_fwd(a.data)
    out = Tensor(y, dtype=a.data.dtype)

    def back(g):
        _accum(a, kernels.softmax_bwd(out.data, g))

    return _record(out, (a,), back)


def _axis_to_last(ndim, axis):
    axes = list(range(ndim))
    axes.append(axes.pop(axis))
    return tuple(axes)


def layer_norm(a, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeMismatchError(f"layer_norm affine shapes {gain.shape}/{bias.shape} != ({d},)")
    y, xhat, rstd = kernels.layernorm_fwd(a.data, gain.data, bias.data, eps)
    out = Tensor(y, dtype=a.data.dtype)

    def back(g):
        gx, dgain, dbias = kernels.layernorm_bwd(g, xhat, rstd, gain.data)
        _accum(a, gx)
        _accum(gain, dgain)
        _accum(bias, dbias)

    return _record(out, (a, gain, bias), back)


def embedding(table, ids):
    """Row gather: out[..., :] = table[ids[...]]. ids is an integer ndarray."""
    ids = np.asarray(ids)
    out = Tensor(table.data[ids], dtype=table.data.dtype)

    def back(g):
        if not table.requires_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids.reshape(-1), g.reshape(-1, table.shape[-1]))

    return _record(out, (table,), back)


# -- convolution -----------------------------------------------------------

def conv2d(x, w, b, stride=1, pad=0):
    """Channels-last conv. x: (B,H,W,Cin), w: (kh,kw,Cin,Cout), b: (Cout,)."""
    kh, kw, cin, cout = w.shape
    if x.shape[-1] != cin:
        raise ShapeMismatchError(f"conv2d channels: input {x.shape} vs weight {w.shape}")
    cols = kernels.im2col(x.data, kh, kw, stride, pad)
    bsz, oh, ow, k = cols.shape
    wmat = w.data.reshape(k, cout)
    out_data = cols.reshape(-1, k) @ wmat + b.data
    out = Tensor(out_data.reshape(bsz, oh, ow, cout), dtype=x.data.dtype)

    def back(g):
        g2 = g.reshape(-1, cout)
        _accum(w, (cols.reshape(-1, k).T @ g2).reshape(w.shape))
        _accum(b, g2.sum(axis=0))
        if x.requires_grad:
            gcols = (g2 @ wmat.T).reshape(bsz, oh, ow, k)
            _accum(x, kernels.col2im(gcols, x.shape, kh, kw, stride, pad))

    return _record(out, (x, w, b), back)


def conv2d_transpose(x, w, b, kh, kw, stride, pad, cout):
    """Transposed conv. x: (B,h,w,Cin), w: (Cin, kh*kw*Cout), b: (Cout,).

    Output spatial size is (h-1)*stride + kh - 2*pad.
    """
    bsz, h, wid, cin = x.shape
    oh = (h - 1) * stride + kh - 2 * pad
    ow = (wid - 1) * stride + kw - 2 * pad
    cols = (x.data.reshape(-1, cin) @ w.data).reshape(bsz, h, wid, kh * kw * cout)
    out_data = kernels.col2im(cols, (bsz, oh, ow, cout), kh, kw, stride, pad)
    out = Tensor(out_data + b.data, dtype=x.data.dtype)

    def back(g):
        gcols = kernels.im2col(g, kh, kw, stride, pad).reshape(-1, kh * kw * cout)
        _accum(w, x.data.reshape(-1, cin).T @ gcols)
        _accum(b, g.sum(axis=(0, 1, 2)))
        _accum(x, (gcols @ w.data.T).reshape(x.shape))

    return _record(out, (x, w, b), back)


# -- losses ----------------------------------------------------------------

def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over rows. logits: (B, n), labels: int array (B,)."""
    labels = np.asarray(labels)
    z = logits.data
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    p = e / e.sum(axis=-1, keepdims=True)
    rows = np.arange(z.shape[0])
    losses = -np.log(np.maximum(p[rows, labels], 1e-30))
    out = Tensor(np.asarray(losses.mean(), dtype=z.dtype), dtype=z.dtype)

    def back(g):
        gz = p.copy()
        gz[rows, labels] -= 1.0
        _accum(logits, g * gz / z.shape[0])

    return _record(out, (logits,), back)


def mse(a, b):
    d = sub(a, b)
    return tmean(mul(d, d))


# -- gradient checking -----------------------------------------------------

def grad_check(f, params, step=1e-4, max_coords_per_param=None):
    """Compare analytic gradients of a scalar computation to central differences.

    ``f`` rebuilds the computation from the current parameter values. With
    ``max_coords_per_param`` set, the probed subset per parameter is the
    coordinates with the largest analytic gradients (the informative ones;
    near-zero coordinates measure only truncation noise at finite step).
    Returns the max over probed coordinates of
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    with Tape() as tape:
        loss = f()
    if not np.isfinite(loss.data).all():
        raise NumericalError("non-finite loss in grad_check")
    tape.backward(loss)
    analytic = []
    for p in params:
        if p.grad is None:
            analytic.append(np.zeros_like(p.data))
        else:
            analytic.append(p.grad.copy())
        p.grad = None

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        aflat = a.reshape(-1)
        if max_coords_per_param is None or n <= max_coords_per_param:
            coords = range(n)
        else:
            coords = np.argsort(-np.abs(aflat), kind="stable")[:max_coords_per_param]
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + step
            with no_grad():
                lp = f().item()
            flat[idx] = orig - step
            with no_grad():
                lm = f().item()
            flat[idx] = orig
            num = (lp - lm) / (2.0 * step)
            if not (np.isfinite(num) and np.isfinite(aflat[idx])):
                raise NumericalError(f"non-finite gradient at coordinate {int(idx)}")
            rel = abs(aflat[idx] - num) / max(abs(aflat[idx]), abs(num), 1e-8)
            worst = max(worst, rel)
    return worst
