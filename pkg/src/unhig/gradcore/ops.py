"""Differentiable primitives with explicit backward rules."""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy import fft as sp_fft
from scipy.special import expit, ndtr

from ..errors import ShapeMismatch
from .tensor import Function, Tensor, as_tensor

PRIMITIVES: dict[str, type[Function]] = {}


def primitive(cls):
    PRIMITIVES[cls.name] = cls
    return cls


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a, b, name):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeMismatch(f"{name}: cannot broadcast {a.shape} with {b.shape}") from exc


# ---------------------------------------------------------------- elementwise

@primitive
class Add(Function):
    name = "add"

    @staticmethod
    def forward(ctx, a, b):
        _check_broadcast(a, b, "add")
        ctx.shapes = (a.shape, b.shape)
        return a + b

    @staticmethod
    def backward(ctx, g):
        return unbroadcast(g, ctx.shapes[0]), unbroadcast(g, ctx.shapes[1])


@primitive
class Sub(Function):
    name = "sub"

    @staticmethod
    def forward(ctx, a, b):
        _check_broadcast(a, b, "sub")
        ctx.shapes = (a.shape, b.shape)
        return a - b

    @staticmethod
    def backward(ctx, g):
        return unbroadcast(g, ctx.shapes[0]), unbroadcast(-g, ctx.shapes[1])


@primitive
class Mul(Function):
    name = "mul"

    @staticmethod
    def forward(ctx, a, b):
        _check_broadcast(a, b, "mul")
        ctx.a, ctx.b = a, b
        return a * b

    @staticmethod
    def backward(ctx, g):
        return unbroadcast(g * ctx.b, ctx.a.shape), unbroadcast(g * ctx.a, ctx.b.shape)


@primitive
class Div(Function):
    name = "div"

    @staticmethod
    def forward(ctx, a, b):
        _check_broadcast(a, b, "div")
        ctx.a, ctx.b = a, b
        return a / b

    @staticmethod
    def backward(ctx, g):
        a, b = ctx.a, ctx.b
        return unbroadcast(g / b, a.shape), unbroadcast(-g * a / (b * b), b.shape)


@primitive
class SafeDiv(Function):
    """``a / b`` with 0/0-style terms (``b == 0``) defined as zero."""

    name = "safe_div"

    @staticmethod
    def forward(ctx, a, b):
        shape = _check_broadcast(a, b, "safe_div")
        ok = np.broadcast_to(b != 0, shape)
        bb = np.where(b != 0, b, 1.0)
        ctx.a, ctx.b, ctx.bb, ctx.ok = a, b, bb, ok
        return np.where(ok, a / bb, 0.0)

    @staticmethod
    def backward(ctx, g):
        g = np.where(ctx.ok, g, 0.0)
        ga = g / ctx.bb
        gb = -g * ctx.a / (ctx.bb * ctx.bb)
        return unbroadcast(ga, ctx.a.shape), unbroadcast(gb, ctx.b.shape)


@primitive
class Neg(Function):
    name = "neg"

    @staticmethod
    def forward(ctx, a):
        return -a

    @staticmethod
    def backward(ctx, g):
        return -g


@primitive
class Power(Function):
    name = "power"

    @staticmethod
    def forward(ctx, a, p=2.0):
        ctx.a, ctx.p = a, p
        return a ** p

    @staticmethod
    def backward(ctx, g):
        return g * ctx.p * ctx.a ** (ctx.p - 1)


@primitive
class Exp(Function):
    name = "exp"

    @staticmethod
    def forward(ctx, a):
        ctx.out = np.exp(a)
        return ctx.out

    @staticmethod
    def backward(ctx, g):
        return g * ctx.out


@primitive
class Log(Function):
    name = "log"

    @staticmethod
    def forward(ctx, a):
        ctx.a = a
        return np.log(a)

    @staticmethod
    def backward(ctx, g):
        return g / ctx.a


@primitive
class Sigmoid(Function):
    name = "sigmoid"

    @staticmethod
    def forward(ctx, a):
        ctx.out = expit(a)
        return ctx.out

    @staticmethod
    def backward(ctx, g):
        s = ctx.out
        return g * s * (1.0 - s)


@primitive
class Gelu(Function):
    """Exact (erf) GELU."""

    name = "gelu"

    @staticmethod
    def forward(ctx, a):
        ctx.a = a
        ctx.cdf = ndtr(a)  # standard normal CDF
        return a * ctx.cdf

    @staticmethod
    def backward(ctx, g):
        a = ctx.a
        pdf = np.exp(-0.5 * a * a) / math.sqrt(2.0 * math.pi)
        return g * (ctx.cdf + a * pdf)


@primitive
class Softplus(Function):
    name = "softplus"

    @staticmethod
    def forward(ctx, a):
        ctx.a = a
        return np.logaddexp(0.0, a)

    @staticmethod
    def backward(ctx, g):
        return g * expit(ctx.a)


@primitive
class LeakyRelu(Function):
    name = "leaky_relu"

    @staticmethod
    def forward(ctx, a, slope=0.2):
        ctx.scale = np.where(a > 0, 1.0, slope)
        return a * ctx.scale

    @staticmethod
    def backward(ctx, g):
        return g * ctx.scale


@primitive
class Clip(Function):
    name = "clip"

    @staticmethod
    def forward(ctx, a, lo=-np.inf, hi=np.inf):
        ctx.mask = (a >= lo) & (a <= hi)
        return np.clip(a, lo, hi)

    @staticmethod
    def backward(ctx, g):
        return g * ctx.mask


@primitive
class Arccos(Function):
    name = "arccos"

    @staticmethod
    def forward(ctx, a):
        ctx.a = a
        return np.arccos(a)

    @staticmethod
    def backward(ctx, g):
        return -g / np.sqrt(1.0 - ctx.a * ctx.a)


@primitive
class LayerNorm(Function):
    """Channel-wise normalisation of (C, H, W) at every pixel with per-channel scale and shift."""

    name = "layer_norm"

    @staticmethod
    def forward(ctx, x, gamma, beta, eps=1e-5):
        if x.ndim != 3 or gamma.shape != (x.shape[0],) or beta.shape != (x.shape[0],):
            raise ShapeMismatch(f"layer_norm: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
        xc = x - x.mean(axis=0, keepdims=True)
        inv = 1.0 / np.sqrt((xc * xc).mean(axis=0, keepdims=True) + eps)
        xn = xc * inv
        ctx.xn, ctx.inv, ctx.gamma = xn, inv, gamma
        return xn * gamma[:, None, None] + beta[:, None, None]

    @staticmethod
    def backward(ctx, g):
        xn, inv = ctx.xn, ctx.inv
        gg = (g * xn).sum(axis=(1, 2))
        gb = g.sum(axis=(1, 2))
        gxn = g * ctx.gamma[:, None, None]
        gx = inv * (gxn - gxn.mean(axis=0, keepdims=True) - xn * (gxn * xn).mean(axis=0, keepdims=True))
        return gx, gg, gb


# ---------------------------------------------------------------- reductions

@primitive
class Sum(Function):
    name = "sum"

    @staticmethod
    def forward(ctx, a, axis=None, keepdims=False):
        ctx.shape, ctx.axis, ctx.keepdims = a.shape, axis, keepdims
        return np.sum(a, axis=axis, keepdims=keepdims)

    @staticmethod
    def backward(ctx, g):
        if ctx.axis is not None and not ctx.keepdims:
            axes = ctx.axis if isinstance(ctx.axis, tuple) else (ctx.axis,)
            axes = sorted(ax % len(ctx.shape) for ax in axes)
            for ax in axes:
                g = np.expand_dims(g, ax)
        return np.broadcast_to(g, ctx.shape).copy()


@primitive
class Norm(Function):
    """Euclidean norm along ``axis``."""

    name = "norm"

    @staticmethod
    def forward(ctx, a, axis=-1, keepdims=False):
        n = np.sqrt(np.sum(a * a, axis=axis, keepdims=True))
        ctx.a, ctx.n, ctx.axis, ctx.keepdims = a, n, axis, keepdims
        return n if keepdims else np.squeeze(n, axis=axis)

    @staticmethod
    def backward(ctx, g):
        if not ctx.keepdims:
            g = np.expand_dims(g, ctx.axis)
        safe = np.where(ctx.n > 0, ctx.n, 1.0)
        return np.where(ctx.n > 0, g * ctx.a / safe, 0.0)


@primitive
class Softmax(Function):
    name = "softmax"

    @staticmethod
    def forward(ctx, a, axis=-1):
        z = a - a.max(axis=axis, keepdims=True)
        e = np.exp(z)
        ctx.s, ctx.axis = e / e.sum(axis=axis, keepdims=True), axis
        return ctx.s

    @staticmethod
    def backward(ctx, g):
        s = ctx.s
        return s * (g - np.sum(g * s, axis=ctx.axis, keepdims=True))


@primitive
class Cumsum(Function):
    name = "cumsum"

    @staticmethod
    def forward(ctx, a, axis=-1):
        ctx.axis = axis
        return np.cumsum(a, axis=axis)

    @staticmethod
    def backward(ctx, g):
        ax = ctx.axis
        return np.flip(np.cumsum(np.flip(g, ax), axis=ax), ax)


# ---------------------------------------------------------------- linear algebra & shape

@primitive
class MatMul(Function):
    name = "matmul"

    @staticmethod
    def forward(ctx, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
        ctx.a, ctx.b = a, b
        return a @ b

    @staticmethod
    def backward(ctx, g):
        a, b = ctx.a, ctx.b
        ga = g @ np.swapaxes(b, -1, -2)
        gb = np.swapaxes(a, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)


@primitive
class Reshape(Function):
    name = "reshape"

    @staticmethod
    def forward(ctx, a, shape=()):
        ctx.shape = a.shape
        try:
            return a.reshape(shape)
        except ValueError as exc:
            raise ShapeMismatch(str(exc)) from exc

    @staticmethod
    def backward(ctx, g):
        return g.reshape(ctx.shape)


@primitive
class Transpose(Function):
    name = "transpose"

    @staticmethod
    def forward(ctx, a, axes=None):
        axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
        ctx.inv = tuple(np.argsort(axes))
        return np.transpose(a, axes)

    @staticmethod
    def backward(ctx, g):
        return np.transpose(g, ctx.inv)


def _is_basic(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis for p in parts)


@primitive
class GetItem(Function):
    """Slicing and integer-array gathering."""

    name = "slice"

    @staticmethod
    def forward(ctx, a, idx=None):
        ctx.shape, ctx.idx, ctx.dtype = a.shape, idx, a.dtype
        return a[idx]

    @staticmethod
    def backward(ctx, g):
        out = np.zeros(ctx.shape, dtype=g.dtype)
        if _is_basic(ctx.idx):
            out[ctx.idx] = g
        else:
            np.add.at(out, ctx.idx, g)
        return out


@primitive
class Concat(Function):
    name = "concat"

    @staticmethod
    def forward(ctx, *arrays, axis=0):
        ctx.axis = axis
        ctx.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        try:
            return np.concatenate(arrays, axis=axis)
        except ValueError as exc:
            raise ShapeMismatch(str(exc)) from exc

    @staticmethod
    def backward(ctx, g):
        return tuple(np.split(g, ctx.splits, axis=ctx.axis))


# ---------------------------------------------------------------- image ops, (C, H, W) layout

def reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    """Mirror indices into ``[0, n)`` without repeating the edge sample; works for any pad."""
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    i = np.mod(idx, period)
    return np.where(i >= n, period - i, i)


def _window_index(h: int, w: int, kh: int, kw: int, padding: str):
    """Flat source index into an (h, w) plane for every output pixel and tap, shape (h*w, kh*kw).

    Zero padding points outside the plane at index ``h*w`` (a zero sentinel).
    """
    key = (h, w, kh, kw, padding)
    hit = _WINDOW_CACHE.get(key)
    if hit is not None:
        return hit
    ph, pw = kh // 2, kw // 2
    rows = np.arange(h)[:, None] + np.arange(kh)[None, :] - ph  # (h, kh)
    cols = np.arange(w)[:, None] + np.arange(kw)[None, :] - pw  # (w, kw)
    if padding == "reflect":
        rows, cols = reflect_index(rows, h), reflect_index(cols, w)
        idx = rows[:, None, :, None] * w + cols[None, :, None, :]
    elif padding == "zero":
        valid = ((rows >= 0) & (rows < h))[:, None, :, None] & ((cols >= 0) & (cols < w))[None, :, None, :]
        idx = np.where(valid, rows[:, None, :, None] * w + cols[None, :, None, :], h * w)
    else:
        raise ValueError(f"unknown padding {padding!r}")
    idx = np.ascontiguousarray(idx.reshape(h * w, kh * kw))
    idx.flags.writeable = False
    _WINDOW_CACHE[key] = idx
    return idx


_WINDOW_CACHE: dict = {}


def _im2col(x: np.ndarray, idx: np.ndarray, padding: str) -> np.ndarray:
    c = x.shape[0]
    x2 = x.reshape(c, -1)
    if padding == "zero":
        x2 = np.concatenate([x2, np.zeros((c, 1), dtype=x.dtype)], axis=1)
    return x2[:, idx]  # (C, HW, taps)


def _col2im(gcols: np.ndarray, idx: np.ndarray, shape: tuple, padding: str) -> np.ndarray:
    c, h, w = shape
    n = h * w + (1 if padding == "zero" else 0)
    flat = (np.arange(c)[:, None, None] * n + idx[None]).ravel()
    gx = np.bincount(flat, weights=gcols.ravel(), minlength=c * n).reshape(c, n)
    return gx[:, :h * w].reshape(shape).astype(gcols.dtype, copy=False)


def _check_kernel(x, k, name):
    if x.ndim != 3 or k.ndim != 3:
        raise ShapeMismatch(f"{name}: x {x.shape}, kernels {k.shape}")
    if k.shape[1] % 2 == 0 or k.shape[2] % 2 == 0:
        raise ShapeMismatch(f"{name}: kernel sizes must be odd")


@primitive
class ConvDepthwise(Function):
    """Same-size depthwise correlation: ``out[c] = pad(x[c]) * k[c]``."""

    name = "conv2d_depthwise"

    @staticmethod
    def forward(ctx, x, k, padding="reflect"):
        _check_kernel(x, k, "conv2d_depthwise")
        if x.shape[0] != k.shape[0]:
            raise ShapeMismatch(f"conv2d_depthwise: {x.shape[0]} channels, {k.shape[0]} kernels")
        c, h, w = x.shape
        idx = _window_index(h, w, k.shape[1], k.shape[2], padding)
        cols = _im2col(x, idx, padding)
        k2 = k.reshape(c, -1, 1)
        ctx.cols, ctx.k, ctx.idx, ctx.padding, ctx.shape = cols, k, idx, padding, x.shape
        return np.matmul(cols, k2).reshape(c, h, w)

    @staticmethod
    def backward(ctx, g):
        c = g.shape[0]
        g2 = g.reshape(c, 1, -1)
        gk = np.matmul(g2, ctx.cols).reshape(ctx.k.shape)
        gcols = g.reshape(c, -1, 1) * ctx.k.reshape(c, 1, -1)
        return _col2im(gcols, ctx.idx, ctx.shape, ctx.padding), gk


@lru_cache(maxsize=64)
def _pad_index(h: int, w: int, ph: int, pw: int, padding: str) -> np.ndarray:
    """Flat source index for every pixel of the padded image (h*w marks a zero)."""
    rows = np.arange(-ph, h + ph)
    cols = np.arange(-pw, w + pw)
    if padding == "reflect":
        idx = reflect_index(rows, h)[:, None] * w + reflect_index(cols, w)[None, :]
    elif padding == "zero":
        valid = ((rows >= 0) & (rows < h))[:, None] & ((cols >= 0) & (cols < w))[None, :]
        idx = np.where(valid, rows[:, None] * w + cols[None, :], h * w)
    else:
        raise ValueError(f"unknown padding {padding!r}")
    idx.flags.writeable = False
    return idx


def _pad(x: np.ndarray, idx: np.ndarray) -> np.ndarray:
    c = x.shape[0]
    x2 = np.concatenate([x.reshape(c, -1), np.zeros((c, 1), dtype=x.dtype)], axis=1)
    return x2[:, idx]


def _unpad(gp: np.ndarray, idx: np.ndarray, shape: tuple) -> np.ndarray:
    c, h, w = shape
    n = h * w + 1
    flat = (np.arange(c)[:, None] * n + idx.reshape(1, -1)).ravel()
    gx = np.bincount(flat, weights=gp.reshape(-1), minlength=c * n).reshape(c, n)
    return gx[:, :h * w].reshape(shape).astype(gp.dtype, copy=False)


@primitive
class ConvShared(Function):
    """Correlate every channel with every one of M shared kernels.

    x (C, H, W), kernels (M, k, k) -> (C*M, H, W) with output channel ``c*M + m``.
    Equivalent to a depthwise convolution of the channel-repeated input; computed
    with FFTs on the padded image, which never wraps inside the kept region.
    """

    name = "conv2d_multi"

    @staticmethod
    def forward(ctx, x, k, padding="reflect"):
        _check_kernel(x, k, "conv2d_multi")
        c, h, w = x.shape
        m, kh, kw = k.shape
        idx = _pad_index(h, w, kh // 2, kw // 2, padding)
        xp = _pad(x, idx)  # (C, H+kh-1, W+kw-1)
        size = tuple(sp_fft.next_fast_len(n, real=True) for n in xp.shape[1:])
        xf = sp_fft.rfft2(xp, s=size)
        kf = sp_fft.rfft2(k, s=size)
        out = sp_fft.irfft2(xf[:, None] * np.conj(kf)[None], s=size)[:, :, :h, :w]
        ctx.xf, ctx.kf, ctx.idx, ctx.size, ctx.shape, ctx.k_shape = xf, kf, idx, size, x.shape, k.shape
        ctx.padded = xp.shape[1:]
        return np.ascontiguousarray(out, dtype=x.dtype).reshape(c * m, h, w)

    @staticmethod
    def backward(ctx, g):
        c, h, w = ctx.shape
        m, kh, kw = ctx.k_shape
        ph, pw = ctx.padded
        gf = sp_fft.rfft2(g.reshape(c, m, h, w), s=ctx.size)  # (C, M, ...)
        gxp = sp_fft.irfft2((gf * ctx.kf[None]).sum(axis=1), s=ctx.size)[:, :ph, :pw]
        gk = sp_fft.irfft2((ctx.xf[:, None] * np.conj(gf)).sum(axis=0), s=ctx.size)[:, :kh, :kw]
        return _unpad(gxp, ctx.idx, ctx.shape).astype(g.dtype, copy=False), np.ascontiguousarray(gk, dtype=g.dtype)


@primitive
class GatherLast(Function):
    """``out[c, ...] = a[c, idx[c, ...]]`` for a 2-D ``a``; scatter-add backward."""

    name = "gather"

    @staticmethod
    def forward(ctx, a, idx=None):
        if a.ndim != 2 or idx.shape[0] != a.shape[0]:
            raise ShapeMismatch(f"gather: a {a.shape}, idx {idx.shape}")
        flat = idx + (np.arange(a.shape[0]) * a.shape[1]).reshape((-1,) + (1,) * (idx.ndim - 1))
        ctx.flat, ctx.shape = flat, a.shape
        return a.reshape(-1)[flat]

    @staticmethod
    def backward(ctx, g):
        size = ctx.shape[0] * ctx.shape[1]
        out = np.bincount(ctx.flat.ravel(), weights=g.ravel(), minlength=size)
        return out.reshape(ctx.shape).astype(g.dtype, copy=False)


@primitive
class Conv1x1(Function):
    """Pointwise channel map ``out = w @ x (+ b)`` on a (C, H, W) image."""

    name = "conv1x1"

    @staticmethod
    def forward(ctx, x, w, b=None):
        if x.ndim != 3 or w.ndim != 2 or w.shape[1] != x.shape[0]:
            raise ShapeMismatch(f"conv1x1: x {x.shape}, w {w.shape}")
        c, h, wd = x.shape
        x2 = x.reshape(c, -1)
        out = w @ x2
        if b is not None:
            out = out + b[:, None]
        ctx.x2, ctx.w, ctx.has_b, ctx.shape = x2, w, b is not None, x.shape
        return out.reshape(w.shape[0], h, wd)

    @staticmethod
    def backward(ctx, g):
        g2 = g.reshape(g.shape[0], -1)
        gx = (ctx.w.T @ g2).reshape(ctx.shape)
        gw = g2 @ ctx.x2.T
        if ctx.has_b:
            return gx, gw, g2.sum(axis=1)
        return gx, gw


@primitive
class Conv2d(Function):
    """Dense strided convolution with zero padding, weights (Cout, Cin, k, k)."""

    name = "conv2d"

    @staticmethod
    def forward(ctx, x, w, b, stride=1, padding=0):
        if x.ndim != 3 or w.ndim != 4 or w.shape[1] != x.shape[0]:
            raise ShapeMismatch(f"conv2d: x {x.shape}, w {w.shape}")
        cin, h, wd = x.shape
        cout, _, kh, kw = w.shape
        s, p = stride, padding
        xp = np.pad(x, ((0, 0), (p, p), (p, p)))
        ho = (h + 2 * p - kh) // s + 1
        wo = (wd + 2 * p - kw) // s + 1
        if ho < 1 or wo < 1:
            raise ShapeMismatch(f"conv2d: input {x.shape} too small for kernel {kh}")
        cols = np.empty((cin, kh, kw, ho, wo), dtype=np.result_type(x, w))
        for u in range(kh):
            for v in range(kw):
                cols[:, u, v] = xp[:, u:u + s * ho:s, v:v + s * wo:s]
        cols = cols.reshape(cin * kh * kw, ho * wo)
        out = w.reshape(cout, -1) @ cols + b[:, None]
        ctx.cols, ctx.w, ctx.xp_shape, ctx.x_shape = cols, w, xp.shape, x.shape
        ctx.s, ctx.p, ctx.ho, ctx.wo = s, p, ho, wo
        return out.reshape(cout, ho, wo)

    @staticmethod
    def backward(ctx, g):
        w = ctx.w
        cout, cin, kh, kw = w.shape
        s, p, ho, wo = ctx.s, ctx.p, ctx.ho, ctx.wo
        g2 = g.reshape(cout, -1)
        gw = (g2 @ ctx.cols.T).reshape(w.shape)
        gb = g2.sum(axis=1)
        gcols = (w.reshape(cout, -1).T @ g2).reshape(cin, kh, kw, ho, wo)
        gxp = np.zeros(ctx.xp_shape, dtype=g.dtype)
        for u in range(kh):
            for v in range(kw):
                gxp[:, u:u + s * ho:s, v:v + s * wo:s] += gcols[:, u, v]
        h, wd = ctx.x_shape[1:]
        return gxp[:, p:p + h, p:p + wd].copy(), gw, gb


@primitive
class AvgPool2(Function):
    name = "avg_pool2"

    @staticmethod
    def forward(ctx, x):
        c, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeMismatch(f"avg_pool2 needs even spatial size, got {x.shape}")
        return x.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))

    @staticmethod
    def backward(ctx, g):
        return np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25


@primitive
class Upsample2(Function):
    name = "upsample2"

    @staticmethod
    def forward(ctx, x):
        return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)

    @staticmethod
    def backward(ctx, g):
        c, h, w = g.shape
        return g.reshape(c, h // 2, 2, w // 2, 2).sum(axis=(2, 4))


# ---------------------------------------------------------------- functional API

def add(a, b): return Add.apply(a, b)
def sub(a, b): return Sub.apply(a, b)
def mul(a, b): return Mul.apply(a, b)
def div(a, b): return Div.apply(a, b)
def safe_div(a, b): return SafeDiv.apply(a, b)
def neg(a): return Neg.apply(a)
def power(a, p): return Power.apply(a, p=float(p))
def exp(a): return Exp.apply(a)
def log(a): return Log.apply(a)
def sigmoid(a): return Sigmoid.apply(a)
def gelu(a): return Gelu.apply(a)
def softplus(a): return Softplus.apply(a)
def leaky_relu(a, slope=0.2): return LeakyRelu.apply(a, slope=slope)
def clip(a, lo=-np.inf, hi=np.inf): return Clip.apply(a, lo=lo, hi=hi)
def arccos(a): return Arccos.apply(a)
def sum(a, axis=None, keepdims=False): return Sum.apply(a, axis=axis, keepdims=keepdims)  # noqa: A001
def norm(a, axis=-1, keepdims=False): return Norm.apply(a, axis=axis, keepdims=keepdims)
def softmax(a, axis=-1): return Softmax.apply(a, axis=axis)
def cumsum(a, axis=-1): return Cumsum.apply(a, axis=axis)
def matmul(a, b): return MatMul.apply(a, b)
def reshape(a, shape): return Reshape.apply(a, shape=tuple(shape))
def transpose(a, axes=None): return Transpose.apply(a, axes=axes)
def getitem(a, idx): return GetItem.apply(a, idx=idx)
def concat(tensors, axis=0): return Concat.apply(*tensors, axis=axis)
def conv2d_depthwise(x, k, padding="reflect"): return ConvDepthwise.apply(x, k, padding=padding)
def conv2d_multi(x, k, padding="reflect"): return ConvShared.apply(x, k, padding=padding)
def gather(a, idx): return GatherLast.apply(a, idx=np.asarray(idx))
def conv2d(x, w, b, stride=1, padding=0): return Conv2d.apply(x, w, b, stride=stride, padding=padding)
def avg_pool2(x): return AvgPool2.apply(x)
def upsample2(x): return Upsample2.apply(x)


def conv1x1(x, w, b=None):
    return Conv1x1.apply(x, w) if b is None else Conv1x1.apply(x, w, b)


def sqrt(a):
    return power(a, 0.5)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.size if axis is None else int(np.prod([a.shape[ax] for ax in np.atleast_1d(axis)]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def take(a, indices, axis=0):
    a = as_tensor(a)
    idx = (slice(None),) * (axis % a.ndim) + (np.asarray(indices),)
    return getitem(a, idx)


def logsumexp(a, axis=-1, keepdims=False):
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = log(sum(exp(sub(a, m)), axis=axis, keepdims=True))
    out = add(s, m)
    if not keepdims:
        out = reshape(out, np.squeeze(out.data, axis=axis).shape)
    return out


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalise a (C, H, W) map over channels at every pixel, then affine per channel."""
    return LayerNorm.apply(x, gamma, beta, eps=eps)


def mse(a, b):
    d = sub(a, b)
    return mean(mul(d, d))


__all__ = [n for n in dir() if not n.startswith("_")] + ["Tensor"]
