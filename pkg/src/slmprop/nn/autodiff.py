"""Reverse-mode autodiff over dense float64 numpy arrays.

A :class:`GradTape` records every primitive applied while it is active, in
execution order; :meth:`GradTape.backward` replays the adjoints in exact
reverse order. With no tape active the same functions run as plain forward
numpy code, which is the inference path.

Shapes are fully explicit; the only broadcasting is bias addition along a
single axis (``add_bias``) and scalar reductions.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import EmptyMemory, ShapeMismatch

_ACTIVE_TAPE = None


class Tensor:
    """Dense float64 array plus an optional accumulated gradient."""

    __slots__ = ("data", "grad", "needs_grad")

    def __init__(self, data, needs_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.needs_grad = bool(needs_grad)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, needs_grad={self.needs_grad})"

    # small amount of operator sugar; everything routes through the
    # recorded primitives below
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)


def const(data) -> Tensor:
    return Tensor(data, needs_grad=False)


class GradTape:
    """Ordered record of primitive operations for adjoint replay."""

    def __init__(self):
        self._records: list[tuple[Tensor, object]] = []

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a GradTape is already active")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def __len__(self):
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into every recorded tensor's .grad."""
        if loss.data.size != 1:
            raise ShapeMismatch(f"backward target must be scalar, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for out, back in reversed(self._records):
            if out.grad is not None:
                back(out.grad)


def _acc(t: Tensor, g) -> None:
    if not t.needs_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make(data, parents, back) -> Tensor:
    """Create the output tensor, recording `back` if a tape is active."""
    if _ACTIVE_TAPE is not None and any(p.needs_grad for p in parents):
        out = Tensor(data, needs_grad=True)
        _ACTIVE_TAPE._records.append((out, back(out)))
        return out
    return Tensor(data)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


# --- elementwise -------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")

    def back(out):
        def fn(g):
            _acc(a, g)
            _acc(b, g)
        return fn

    return _make(a.data + b.data, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")

    def back(out):
        def fn(g):
            _acc(a, g)
            _acc(b, -g)
        return fn

    return _make(a.data - b.data, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")

    def back(out):
        def fn(g):
            _acc(a, g * b.data)
            _acc(b, g * a.data)
        return fn

    return _make(a.data * b.data, (a, b), back)


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "div")

    def back(out):
        def fn(g):
            _acc(a, g / b.data)
            _acc(b, -g * a.data / (b.data * b.data))
        return fn

    return _make(a.data / b.data, (a, b), back)


def neg(a: Tensor) -> Tensor:
    def back(out):
        def fn(g):
            _acc(a, -g)
        return fn

    return _make(-a.data, (a,), back)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def back(out):
        def fn(g):
            _acc(a, g * s)
        return fn

    return _make(a.data * s, (a,), back)


def pow_const(a: Tensor, p: float) -> Tensor:
    p = float(p)

    def back(out):
        def fn(g):
            _acc(a, g * p * np.power(a.data, p - 1.0))
        return fn

    return _make(np.power(a.data, p), (a,), back)


def abs_t(a: Tensor) -> Tensor:
    def back(out):
        def fn(g):
            _acc(a, g * np.sign(a.data))
        return fn

    return _make(np.abs(a.data), (a,), back)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def back(out):
        def fn(g):
            _acc(a, g * out.data * (1.0 - out.data))
        return fn

    return _make(y, (a,), back)


def softplus(a: Tensor) -> Tensor:
    y = np.logaddexp(0.0, a.data)

    def back(out):
        def fn(g):
            _acc(a, g / (1.0 + np.exp(-a.data)))
        return fn

    return _make(y, (a,), back)


_GELU_K = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    inner = _GELU_K * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    y = 0.5 * x * (1.0 + t)

    def back(out):
        def fn(g):
            sech2 = 1.0 - t * t
            d = 0.5 * (1.0 + t) + 0.5 * x * sech2 * _GELU_K * (1.0 + 3 * 0.044715 * x * x)
            _acc(a, g * d)
        return fn

    return _make(y, (a,), back)


# --- shape ops ---------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def back(out):
        def fn(g):
            _acc(a, g.reshape(a.data.shape))
        return fn

    return _make(a.data.reshape(shape), (a,), back)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def back(out):
        def fn(g):
            _acc(a, g.transpose(inv))
        return fn

    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,), back)


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    offs = np.cumsum([0] + sizes)

    def back(out):
        def fn(g):
            for t, lo, hi in zip(tensors, offs[:-1], offs[1:]):
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _acc(t, g[tuple(idx)])
        return fn

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back)


# --- reductions / broadcasts -------------------------------------------------

def sum_all(a: Tensor) -> Tensor:
    def back(out):
        def fn(g):
            _acc(a, g)  # scalar broadcast
        return fn

    return _make(a.data.sum(), (a,), back)


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.data.size)


def sum_axis(a: Tensor, axis: int, keepdims: bool = True) -> Tensor:
    def back(out):
        def fn(g):
            gg = g if keepdims else np.expand_dims(g, axis)
            _acc(a, gg)
        return fn

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)


def add_bias(x: Tensor, b: Tensor, axis: int) -> Tensor:
    """Add a 1D bias broadcast along one axis of x."""
    if b.data.ndim != 1 or x.data.shape[axis] != b.data.shape[0]:
        raise ShapeMismatch(
            f"add_bias: bias {b.data.shape} does not fit axis {axis} of {x.data.shape}"
        )
    nd = x.data.ndim
    ax = axis % nd
    bshape = [1] * nd
    bshape[ax] = b.data.shape[0]
    reduce_axes = tuple(i for i in range(nd) if i != ax)

    def back(out):
        def fn(g):
            _acc(x, g)
            _acc(b, g.sum(axis=reduce_axes))
        return fn

    return _make(x.data + b.data.reshape(bshape), (x, b), back)


# --- linear algebra ----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a @ b. Either b is a 2D weight shared across leading axes of a, or
    a and b have identical leading (batch) dimensions."""
    ad, bd = a.data, b.data
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeMismatch(f"matmul: inner dims {ad.shape} x {bd.shape}")
    if bd.ndim != 2 and ad.shape[:-2] != bd.shape[:-2]:
        raise ShapeMismatch(f"matmul: batch dims {ad.shape} x {bd.shape} differ")

    def back(out):
        def fn(g):
            _acc(a, g @ np.swapaxes(bd, -1, -2))
            if bd.ndim == 2:
                _acc(b, ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1]))
            else:
                _acc(b, np.swapaxes(ad, -1, -2) @ g)
        return fn

    return _make(ad @ bd, (a, b), back)


# --- normalization / softmax -------------------------------------------------

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(out):
        def fn(g):
            yv = out.data
            dot = (g * yv).sum(axis=axis, keepdims=True)
            _acc(a, yv * (g - dot))
        return fn

    return _make(y, (a,), back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the last axis to zero mean / unit variance, then affine."""
    c = x.data.shape[-1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeMismatch(f"layer_norm: affine shapes {gamma.data.shape}/{beta.data.shape} vs C={c}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    istd = 1.0 / np.sqrt(var + eps)
    xhat = xc * istd

    def back(out):
        def fn(g):
            lead = tuple(range(g.ndim - 1))
            _acc(gamma, (g * xhat).sum(axis=lead))
            _acc(beta, g.sum(axis=lead))
            dxhat = g * gamma.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            _acc(x, istd * (dxhat - m1 - xhat * m2))
        return fn

    return _make(xhat * gamma.data + beta.data, (x, gamma, beta), back)


def instance_norm2d(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize each channel map over its spatial extent, then per-channel
    affine; x [B,C,H,W], gamma/beta [C]. Preserves within-map contrast."""
    b, c, h, w = x.data.shape
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeMismatch(f"instance_norm2d: affine {gamma.data.shape}/{beta.data.shape} vs C={c}")
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=(2, 3), keepdims=True)
    istd = 1.0 / np.sqrt(var + eps)
    xhat = xc * istd

    def back(out):
        def fn(g):
            _acc(gamma, (g * xhat).sum(axis=(0, 2, 3)))
            _acc(beta, g.sum(axis=(0, 2, 3)))
            dxhat = g * gamma.data.reshape(1, c, 1, 1)
            m1 = dxhat.mean(axis=(2, 3), keepdims=True)
            m2 = (dxhat * xhat).mean(axis=(2, 3), keepdims=True)
            _acc(x, istd * (dxhat - m1 - xhat * m2))
        return fn

    return _make(xhat * gamma.data.reshape(1, c, 1, 1) + beta.data.reshape(1, c, 1, 1),
                 (x, gamma, beta), back)


# --- convolution -------------------------------------------------------------

def _conv_windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    """Cross-correlation; x [B,Cin,H,W], w [Cout,Cin/groups,kh,kw]."""
    B, cin, H, W = x.data.shape
    cout, cg, kh, kw = w.data.shape
    if cin % groups or cout % groups:
        raise ShapeMismatch(f"conv2d: channels {cin}->{cout} not divisible by groups={groups}")
    if cg != cin // groups:
        raise ShapeMismatch(f"conv2d: weight expects {cg} channels/group, input has {cin // groups}")
    if H + 2 * padding < kh or W + 2 * padding < kw:
        raise ShapeMismatch(f"conv2d: kernel {kh}x{kw} larger than padded input")
    ho = (H + 2 * padding - kh) // stride + 1
    wo = (W + 2 * padding - kw) // stride + 1
    dg = cout // groups

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = _conv_windows(xp, kh, kw, stride).reshape(B, groups, cg, ho, wo, kh, kw)
    wg = w.data.reshape(groups, dg, cg, kh, kw)
    out = np.einsum("bgchwkl,gdckl->bgdhw", win, wg, optimize=True).reshape(B, cout, ho, wo)
    if b is not None:
        out = out + b.data.reshape(1, cout, 1, 1)

    parents = (x, w) if b is None else (x, w, b)

    def back(out_t):
        def fn(g):
            gg = g.reshape(B, groups, dg, ho, wo)
            if b is not None:
                _acc(b, g.sum(axis=(0, 2, 3)))
            if w.needs_grad:
                dw = np.einsum("bgchwkl,bgdhw->gdckl", win, gg, optimize=True)
                _acc(w, dw.reshape(cout, cg, kh, kw))
            if x.needs_grad:
                dxp = np.zeros_like(xp)
                for ki in range(kh):
                    for kj in range(kw):
                        contrib = np.einsum("bgdhw,gdc->bgchw", gg, wg[:, :, :, ki, kj], optimize=True)
                        dxp[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += \
                            contrib.reshape(B, cin, ho, wo)
                if padding:
                    dxp = dxp[:, :, padding:padding + H, padding:padding + W]
                _acc(x, dxp)
        return fn

    return _make(out, parents, back)


def conv_transpose2x2(x: Tensor, w: Tensor, b: Tensor | None) -> Tensor:
    """Transposed convolution, kernel 2, stride 2 (exact x2 upsampling).

    x [B,Cin,H,W], w [Cin,Cout,2,2] -> [B,Cout,2H,2W].
    """
    B, cin, H, W = x.data.shape
    wcin, cout, kh, kw = w.data.shape
    if wcin != cin or (kh, kw) != (2, 2):
        raise ShapeMismatch(f"conv_transpose2x2: weight {w.data.shape} vs input {x.data.shape}")
    out6 = np.einsum("bchw,cdkl->bdhkwl", x.data, w.data, optimize=True)
    out = out6.reshape(B, cout, 2 * H, 2 * W)
    if b is not None:
        out = out + b.data.reshape(1, cout, 1, 1)

    parents = (x, w) if b is None else (x, w, b)

    def back(out_t):
        def fn(g):
            g6 = g.reshape(B, cout, H, 2, W, 2)
            if b is not None:
                _acc(b, g.sum(axis=(0, 2, 3)))
            if w.needs_grad:
                _acc(w, np.einsum("bchw,bdhkwl->cdkl", x.data, g6, optimize=True))
            if x.needs_grad:
                _acc(x, np.einsum("bdhkwl,cdkl->bchw", g6, w.data, optimize=True))
        return fn

    return _make(out, parents, back)


# --- lookup ------------------------------------------------------------------

def embedding_rows(table: Tensor, idx) -> Tensor:
    """Gather rows of a 2D table; backward scatter-adds."""
    idx = np.asarray(idx, dtype=np.intp)

    def back(out):
        def fn(g):
            if table.needs_grad:
                if table.grad is None:
                    table.grad = np.zeros_like(table.data)
                np.add.at(table.grad, idx, g)
        return fn

    return _make(table.data[idx], (table,), back)


# --- composites --------------------------------------------------------------

def mlp2(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Two-layer pointwise MLP with GELU between; x [..., C]."""
    h = add_bias(matmul(x, w1), b1, axis=-1)
    h = gelu(h)
    return add_bias(matmul(h, w2), b2, axis=-1)


def cross_attention(q: Tensor, k: Tensor, v: Tensor, heads: int,
                    wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor,
                    bq: Tensor, bk: Tensor, bv: Tensor, bo: Tensor) -> Tensor:
    """Multi-head scaled dot-product attention.

    q [B,Nq,C], k/v [B,Nk,C]; per-head scale 1/sqrt(C/heads); heads are
    concatenated and output-projected.
    """
    B, nq, c = q.data.shape
    nk = k.data.shape[1]
    if nk == 0:
        raise EmptyMemory("attention over zero key tokens")
    if c % heads:
        raise ShapeMismatch(f"channels {c} not divisible by heads {heads}")
    hd = c // heads

    def split(t):  # [B,N,C] -> [B,heads,N,hd]
        return transpose(reshape(t, (B, t.data.shape[1], heads, hd)), (0, 2, 1, 3))

    qh = split(add_bias(matmul(q, wq), bq, axis=-1))
    kh = split(add_bias(matmul(k, wk), bk, axis=-1))
    vh = split(add_bias(matmul(v, wv), bv, axis=-1))
    logits = scale(matmul(qh, transpose(kh, (0, 1, 3, 2))), 1.0 / math.sqrt(hd))
    attn = softmax(logits, axis=-1)
    ctx = matmul(attn, vh)  # [B,heads,Nq,hd]
    ctx = reshape(transpose(ctx, (0, 2, 1, 3)), (B, nq, c))
    return add_bias(matmul(ctx, wo), bo, axis=-1)
