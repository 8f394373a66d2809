"""Small module/layer system over the tensor core.

Parameter names follow attribute paths (``blocks.3.tca.wq``), which the
trainer uses for freeze globs and checkpoint bundles.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import (
    ConfigurationError,
    Tensor,
    add,
    concat,
    conv2d,
    conv2d_transpose,
    layer_norm,
    matmul,
    mul,
    permute,
    reshape,
    silu,
    softmax,
)


def xavier_uniform(shape, fan_in, fan_out, rng, dtype=np.float32):
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape).astype(dtype)


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if not name.startswith("_"):
            if isinstance(value, Tensor):
                self._params[name] = value
            elif isinstance(value, Module):
                self._children[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self):
        for n, p in self._params.items():
            yield n, p
        for cn, c in self._children.items():
            for n, p in c.named_parameters():
                yield f"{cn}.{n}", p

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def astype(self, dtype):
        for p in self.parameters():
            p.data = np.ascontiguousarray(p.data.astype(dtype))
        return self

    def num_params(self):
        return sum(p.data.size for p in self.parameters())

    def zero_grads(self):
        for p in self.parameters():
            p.grad = None


class ModuleList(Module):
    def __init__(self, mods=()):
        super().__init__()
        object.__setattr__(self, "_items", [])
        for m in mods:
            self.append(m)

    def append(self, m):
        self._children[str(len(self._items))] = m
        self._items.append(m)

    def __iter__(self):
        return iter(self._items)

    def __getitem__(self, i):
        return self._items[i]

    def __len__(self):
        return len(self._items)


def _param(data):
    return Tensor(data, requires_grad=True, dtype=data.dtype)


class Linear(Module):
    def __init__(self, din, dout, rng, zero_init=False, bias=True, bias_fill=0.0,
                 dtype=np.float32):
        super().__init__()
        if zero_init:
            w = np.zeros((din, dout), dtype=dtype)
        else:
            w = xavier_uniform((din, dout), din, dout, rng, dtype)
        self.w = _param(w)
        self._has_bias = bias
        if bias:
            self.b = _param(np.full(dout, bias_fill, dtype=dtype))

    def __call__(self, x):
        y = matmul(x, self.w)
        return add(y, self.b) if self._has_bias else y


class LayerNorm(Module):
    def __init__(self, dim, dtype=np.float32):
        super().__init__()
        self.gain = _param(np.ones(dim, dtype=dtype))
        self.bias = _param(np.zeros(dim, dtype=dtype))

    def __call__(self, x):
        return layer_norm(x, self.gain, self.bias)


class FeedForward(Module):
    """Two-layer MLP with SiLU, the transformer block expansion."""

    def __init__(self, dim, hidden, rng, dtype=np.float32):
        super().__init__()
        self.fc1 = Linear(dim, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, dim, rng, dtype=dtype)

    def __call__(self, x):
        return self.fc2(silu(self.fc1(x)))


class MultiHeadAttention(Module):
    """Scaled dot-product attention with per-head split and output projection.

    Accepts (L, d) or (B, L, d) inputs; keys/values share the trailing dims.
    ``zero_out`` initializes the output projection to zero so the layer starts
    as an exact no-op inside a residual branch.
    """

    def __init__(self, dim, heads, rng, zero_out=False, dtype=np.float32):
        super().__init__()
        if dim % heads != 0:
            raise ConfigurationError(f"model width {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.scale = 1.0 / math.sqrt(self.head_dim)
        self.wq = Linear(dim, dim, rng, dtype=dtype)
        # no key bias: softmax is invariant to a constant logit shift per query,
        # so a key bias would be a dead parameter
        self.wk = Linear(dim, dim, rng, bias=False, dtype=dtype)
        self.wv = Linear(dim, dim, rng, dtype=dtype)
        self.wo = Linear(dim, dim, rng, zero_init=zero_out, dtype=dtype)

    def __call__(self, q, k, v, key_mask=None):
        squeeze = q.ndim == 2
        if squeeze:
            q, k, v = (reshape(t, (1,) + t.shape) for t in (q, k, v))
        b, lq, _ = q.shape
        lk = k.shape[1]
        h, dh = self.heads, self.head_dim

        def split(t, length):
            t = reshape(t, (b, length, h, dh))
            return permute(t, (0, 2, 1, 3))

        qh = split(self.wq(q), lq)
        kh = split(self.wk(k), lk)
        vh = split(self.wv(v), lk)
        logits = mul(matmul(qh, permute(kh, (0, 1, 3, 2))), self.scale)
        if key_mask is not None:
            neg = np.where(np.asarray(key_mask), -1e9, 0.0).astype(logits.dtype)
            logits = add(logits, Tensor(neg.reshape(1, 1, 1, lk), dtype=logits.dtype))
        att = softmax(logits, axis=-1)
        ctx = permute(matmul(att, vh), (0, 2, 1, 3))
        out = self.wo(reshape(ctx, (b, lq, self.dim)))
        if squeeze:
            out = reshape(out, out.shape[1:])
        return out


class Embedding(Module):
    def __init__(self, vocab, dim, rng, dtype=np.float32):
        super().__init__()
        self.table = _param((rng.standard_normal((vocab, dim)) * 0.02).astype(dtype))

    def __call__(self, ids):
        from .tensor import embedding

        return embedding(self.table, ids)


class Conv2d(Module):
    def __init__(self, cin, cout, k, stride, pad, rng, dtype=np.float32):
        super().__init__()
        fan_in = k * k * cin
        fan_out = k * k * cout
        self.w = _param(xavier_uniform((k, k, cin, cout), fan_in, fan_out, rng, dtype))
        self.b = _param(np.zeros(cout, dtype=dtype))
        self.stride = stride
        self.pad = pad

    def __call__(self, x):
        return conv2d(x, self.w, self.b, stride=self.stride, pad=self.pad)


class ConvTranspose2d(Module):
    def __init__(self, cin, cout, k, stride, pad, rng, dtype=np.float32):
        super().__init__()
        fan_in = cin
        fan_out = k * k * cout
        self.w = _param(xavier_uniform((cin, k * k * cout), fan_in, fan_out, rng, dtype))
        self.b = _param(np.zeros(cout, dtype=dtype))
        self.k = k
        self.stride = stride
        self.pad = pad
        self.cout = cout

    def __call__(self, x):
        return conv2d_transpose(
            x, self.w, self.b, self.k, self.k, self.stride, self.pad, self.cout
        )


class TransformerBlock(Module):
    """Pre-LN self-attention + feed-forward residual block."""

    def __init__(self, dim, heads, rng, mlp_ratio=4, dtype=np.float32):
        super().__init__()
        self.ln1 = LayerNorm(dim, dtype=dtype)
        self.attn = MultiHeadAttention(dim, heads, rng, dtype=dtype)
        self.ln2 = LayerNorm(dim, dtype=dtype)
        self.mlp = FeedForward(dim, dim * mlp_ratio, rng, dtype=dtype)

    def __call__(self, x):
        h = self.ln1(x)
        x = add(x, self.attn(h, h, h))
        return add(x, self.mlp(self.ln2(x)))


class CrossAttentionBlock(Module):
    """Pre-LN block: self-attention over queries, cross-attention to a context,
    then feed-forward. The Q-Former building block."""

    def __init__(self, dim, heads, rng, mlp_ratio=4, dtype=np.float32):
        super().__init__()
        self.ln_self = LayerNorm(dim, dtype=dtype)
        self.self_attn = MultiHeadAttention(dim, heads, rng, dtype=dtype)
        self.ln_q = LayerNorm(dim, dtype=dtype)
        self.ln_kv = LayerNorm(dim, dtype=dtype)
        self.cross_attn = MultiHeadAttention(dim, heads, rng, dtype=dtype)
        self.ln_mlp = LayerNorm(dim, dtype=dtype)
        self.mlp = FeedForward(dim, dim * mlp_ratio, rng, dtype=dtype)

    def __call__(self, q, context):
        h = self.ln_self(q)
        q = add(q, self.self_attn(h, h, h))
        kv = self.ln_kv(context)
        q = add(q, self.cross_attn(self.ln_q(q), kv, kv))
        return add(q, self.mlp(self.ln_mlp(q)))


def stack_rows(t, repeats):
    """(B, L, d) -> (B*repeats, L, d) by repeating each sample's rows in place."""
    from .tensor import expand

    b, l, d = t.shape
    e = expand(reshape(t, (b, 1, l, d)), (b, repeats, l, d))
    return reshape(e, (b * repeats, l, d))


def concat_rows(tensors):
    return concat(tensors, axis=-2)
