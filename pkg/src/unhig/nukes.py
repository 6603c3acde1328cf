"""Non-uniform rational B-spline activations and the gated spline feed-forward block.

Scalar reference evaluators (:func:`bspline_basis_recursive`,
:func:`bspline_basis_matrix`, :func:`nuk_eval`) work on plain numpy values; the
layer path (:func:`basis_tensor`, :class:`NukesLayer`) is built from tape
primitives so gradients reach knots, control points and weights.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import (
    DegreeUnsupported,
    IndexOutOfRange,
    InvalidParam,
    OutOfDomain,
    ShapeMismatch,
    ZeroDenominator,
)
from .gradcore import Function, Module, Tensor, init_normal, ops, param, zeros
from .gradcore.ops import primitive

MAX_DEGREE = 5


@dataclass(frozen=True, eq=False)
class SplineSpec:
    degree: int
    knots: np.ndarray
    control_points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=np.float64)
        cps = np.asarray(self.control_points, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        p = self.degree
        if p < 0:
            raise InvalidParam("degree must be >= 0")
        if np.any(np.diff(knots) < 0):
            raise InvalidParam("knots must be non-decreasing")
        if cps.ndim != 1 or w.shape != cps.shape:
            raise InvalidParam("control points and weights must be 1-D of equal length")
        if knots.size != cps.size + p + 1:
            raise InvalidParam(f"need {cps.size + p + 1} knots for {cps.size} basis functions, got {knots.size}")
        if np.any(w <= 0):
            raise InvalidParam("rational weights must be positive")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "control_points", cps)
        object.__setattr__(self, "weights", w)

    @property
    def n_basis(self) -> int:
        return self.control_points.size

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[self.degree]), float(self.knots[self.n_basis])


# ---------------------------------------------------------------- reference evaluators

def bspline_basis_recursive(i: int, p: int, x: float, knots) -> float:
    """Cox-de Boor value ``N_{i,p}(x)``; 0/0 terms are taken as 0."""
    knots = np.asarray(knots, dtype=np.float64)
    if i < 0 or p < 0 or i + p + 1 >= knots.size:
        raise IndexOutOfRange(f"N_{{{i},{p}}} needs knots up to index {i + p + 1}, have {knots.size}")
    return _cox_de_boor(i, p, float(x), knots)


def _cox_de_boor(i, p, x, k):
    if p == 0:
        return 1.0 if k[i] <= x < k[i + 1] else 0.0
    out = 0.0
    d1 = k[i + p] - k[i]
    if d1 != 0:
        out += (x - k[i]) / d1 * _cox_de_boor(i, p - 1, x, k)
    d2 = k[i + p + 1] - k[i + 1]
    if d2 != 0:
        out += (k[i + p + 1] - x) / d2 * _cox_de_boor(i + 1, p - 1, x, k)
    return out


def find_span(p: int, x: float, knots: np.ndarray) -> int:
    """Index ``j`` with ``knots[j] <= x < knots[j+1]``, ``p <= j <= n``; the right end maps to the last span."""
    n = knots.size - p - 2
    if x < knots[p] or x > knots[n + 1]:
        raise OutOfDomain(f"x={x} outside [{knots[p]}, {knots[n + 1]}]")
    j = int(np.searchsorted(knots, x, side="right")) - 1
    j = min(max(j, p), n)
    while knots[j + 1] == knots[j] and j > p:  # right end sits on repeated knots
        j -= 1
    return j


def _poly_mul_linear(c: np.ndarray, a: float, b: float) -> np.ndarray:
    """Coefficients (ascending in u) of ``(a + b u) * c(u)``."""
    out = np.zeros(c.size + 1)
    out[:-1] += a * c
    out[1:] += b * c
    return out


def span_matrix(p: int, j: int, knots: np.ndarray) -> np.ndarray:
    """Coefficient matrix ``M`` for span ``j``: row ``[u^p, ..., u, 1] @ M`` gives ``N_{j-p..j, p}``.

    ``u = (x - knots[j]) / (knots[j+1] - knots[j])`` runs over ``[0, 1]`` on the span.
    """
    x0, h = knots[j], knots[j + 1] - knots[j]
    # polys[i] for basis N_{i, q}, i in j-q .. j, ascending coefficients in u
    polys = {j: np.array([1.0])}
    for q in range(1, p + 1):
        nxt = {}
        for i in range(j - q, j + 1):
            acc = np.zeros(q + 1)
            if i in polys:
                d1 = knots[i + q] - knots[i]
                if d1 != 0:
                    acc += _poly_mul_linear(polys[i], (x0 - knots[i]) / d1, h / d1)
            if i + 1 in polys:
                d2 = knots[i + q + 1] - knots[i + 1]
                if d2 != 0:
                    acc += _poly_mul_linear(polys[i + 1], (knots[i + q + 1] - x0) / d2, -h / d2)
            nxt[i] = acc
        polys = nxt
    m = np.zeros((p + 1, p + 1))
    for col, i in enumerate(range(j - p, j + 1)):
        coeffs = polys.get(i, np.zeros(p + 1))
        m[:, col] = coeffs[::-1]  # descending powers to match [u^p ... 1]
    return m


def power_row(u: float, p: int) -> np.ndarray:
    return u ** np.arange(p, -1, -1, dtype=np.float64)


def bspline_basis_matrix(p: int, x_batch, knots) -> np.ndarray:
    """All basis values for every ``x``: shape ``(len(x), n_basis)``, via ``T_p(u) @ M_{B,p}``."""
    if p > MAX_DEGREE or p < 0:
        raise DegreeUnsupported(f"degree {p} not in 0..{MAX_DEGREE}")
    knots = np.asarray(knots, dtype=np.float64)
    xs = np.atleast_1d(np.asarray(x_batch, dtype=np.float64))
    n_basis = knots.size - p - 1
    if n_basis < 1:
        raise IndexOutOfRange("knot vector too short for this degree")
    out = np.zeros((xs.size, n_basis))
    cache: dict[int, np.ndarray] = {}
    for r, x in enumerate(xs):
        j = find_span(p, x, knots)
        if j not in cache:
            cache[j] = span_matrix(p, j, knots)
        h = knots[j + 1] - knots[j]
        u = (x - knots[j]) / h
        out[r, j - p:j + 1] = power_row(u, p) @ cache[j]
    return out


def nuk_eval(spec: SplineSpec, x) -> np.ndarray | float:
    """Rational curve ``sum N w P / sum N w`` at ``x`` (scalar or array)."""
    scalar = np.ndim(x) == 0
    basis = bspline_basis_matrix(spec.degree, x, spec.knots)
    num = basis @ (spec.weights * spec.control_points)
    den = basis @ spec.weights
    if np.any(den <= 1e-300):
        raise ZeroDenominator("rational denominator vanished; check knots and weights")
    out = num / den
    return float(out[0]) if scalar else out


def greville(knots: np.ndarray, p: int) -> np.ndarray:
    knots = np.asarray(knots, dtype=np.float64)
    n = knots.size - p - 1
    if p == 0:
        return 0.5 * (knots[:n] + knots[1:n + 1])
    return np.array([knots[i + 1:i + p + 1].mean() for i in range(n)])


def basis_table(p: int, knots, xs) -> np.ndarray:
    """``[x, N_0(x), ..., N_n(x)]`` rows for CSV dumps."""
    xs = np.asarray(xs, dtype=np.float64)
    return np.column_stack([xs, bspline_basis_matrix(p, xs, knots)])


# ---------------------------------------------------------------- knot generator

def clamped_uniform_knots(n_interior: int, p: int, r: float) -> np.ndarray:
    inner = np.linspace(-r, r, n_interior + 2)
    return np.concatenate([np.full(p, -r), inner, np.full(p, r)])


def ncpg_offsets(raw_increments) -> np.ndarray:
    """Cumulative positive offsets ``cumsum(softplus(raw))`` before rescaling."""
    return np.cumsum(np.logaddexp(0.0, np.asarray(raw_increments, dtype=np.float64)), axis=-1)


def ncpg_generate(raw_increments, control_raw, degree: int = 3, r: float = 4.0):
    """Knot vector and control points from unconstrained parameters.

    ``raw_increments`` has ``G + 1`` entries, one per gap between ``-r``, the ``G``
    interior knots and ``r``.  Gaps are ``softplus(raw)`` rescaled so the last
    breakpoint lands exactly on ``r``; both ends get multiplicity ``degree + 1``.
    """
    off = ncpg_offsets(raw_increments)
    frac = off / off[..., -1:]
    interior = -r + 2.0 * r * frac[..., :-1]
    lead = np.full(interior.shape[:-1] + (degree + 1,), -r)
    tail = np.full(interior.shape[:-1] + (degree + 1,), r)
    knots = np.concatenate([lead, interior, tail], axis=-1)
    return knots, np.asarray(control_raw, dtype=np.float64).copy()


def ncpg_knots_tensor(raw: Tensor, degree: int, r: float) -> Tensor:
    """Differentiable version of the knot half of :func:`ncpg_generate`; ``raw`` is (C, G+1)."""
    off = ops.cumsum(ops.softplus(raw), axis=-1)
    frac = ops.div(off, off[:, -1:])
    interior = ops.add(ops.mul(frac[:, :-1], 2.0 * r), -r)
    c = raw.shape[0]
    lead = Tensor(np.full((c, degree + 1), -r))
    tail = Tensor(np.full((c, degree + 1), r))
    return ops.concat([lead, interior, tail], axis=-1)


# ---------------------------------------------------------------- tape path

def find_spans(x: np.ndarray, knots: np.ndarray, p: int) -> np.ndarray:
    """Vectorised :func:`find_span` for x (C, S) against per-channel knots (C, K); no domain check."""
    nb = knots.shape[1] - p - 1
    span = p + (x[:, :, None] >= knots[:, None, p + 1:nb]).sum(axis=2)
    # right end: last span of non-zero width
    nondeg = knots[:, p + 1:nb + 1] > knots[:, p:nb]
    last = nb - 1 - np.argmax(nondeg[:, ::-1], axis=1)
    return np.where(x >= knots[:, nb:nb + 1], last[:, None], span)


def active_basis(x: Tensor, knots: Tensor, p: int):
    """The ``p + 1`` non-zero basis values at every sample, via the triangular de Boor scheme.

    x is (C, S), knots (C, K).  Returns ``(values, span)``: a (C, S, p + 1) tensor
    holding ``N_{span-p+r, p}`` in slot r, and the span indices.  Each level of
    the triangle is evaluated for all r at once; knot positions stay on the tape.
    """
    span = find_spans(x.data, knots.data, p)
    c, s = x.shape
    vals = Tensor(np.ones((c, s, 1), dtype=x.dtype))
    if p == 0:
        return vals, span
    local = ops.gather(knots, span[..., None] + np.arange(-p + 1, p + 1))  # U[span-p+1 .. span+p]
    x3 = ops.reshape(x, (c, s, 1))
    left = ops.sub(x3, ops.getitem(local, (Ellipsis, slice(p - 1, None, -1))))  # left[j-1] = x - U[span+1-j]
    right = ops.sub(ops.getitem(local, (Ellipsis, slice(p, None))), x3)  # right[j-1] = U[span+j] - x
    zero = Tensor(np.zeros((c, s, 1), dtype=x.dtype))
    for j in range(1, p + 1):
        rj = ops.getitem(right, (Ellipsis, slice(0, j)))  # right[r+1], r = 0..j-1
        lj = ops.getitem(left, (Ellipsis, slice(j - 1, None, -1)))  # left[j-r]
        temp = ops.div(vals, ops.add(rj, lj))
        vals = ops.add(ops.concat([ops.mul(rj, temp), zero], axis=2), ops.concat([zero, ops.mul(lj, temp)], axis=2))
    return vals, span


def basis_tensor(x: Tensor, knots: Tensor, p: int) -> Tensor:
    """Dense (C, S, n_basis) basis matrix from :func:`active_basis` (for inspection and tests)."""
    vals, span = active_basis(x, knots, p)
    c, k = knots.shape
    out = np.zeros(x.shape + (k - p - 1,))
    np.put_along_axis(out, span[..., None] - p + np.arange(p + 1), vals.data, axis=-1)
    return Tensor(out)


def rational_curve(x: Tensor, knots: Tensor, control: Tensor, weights: Tensor, p: int) -> Tensor:
    """Per-channel ``sum N w P / sum N w`` with x (C, S), knots (C, K), control/weights (C, n_basis).

    Built from tape primitives; :class:`RationalSpline` is the fused equivalent used by the layer.
    """
    vals, span = active_basis(x, knots, p)
    idx = span[..., None] - p + np.arange(p + 1)
    wp = ops.gather(ops.mul(weights, control), idx)
    w = ops.gather(weights, idx)
    return ops.div(ops.sum(ops.mul(vals, wp), axis=2), ops.sum(ops.mul(vals, w), axis=2))


@primitive
class RationalSpline(Function):
    """Fused rational B-spline curve with a hand-written adjoint of the de Boor triangle.

    Inputs x (C, S), knots (C, K), control (C, n), weights (C, n); output (C, S).
    """

    name = "rational_spline"

    @staticmethod
    def forward(ctx, x, knots, control, weights, p=3):
        span = find_spans(x, knots, p)
        rows = np.arange(x.shape[0])[:, None] * knots.shape[1]
        kflat = knots.ravel()
        # left[j] = x - U[span+1-j], right[j] = U[span+j] - x, j = 1..p
        left = [None] + [x - kflat[rows + span + 1 - j] for j in range(1, p + 1)]
        right = [None] + [kflat[rows + span + j] - x for j in range(1, p + 1)]
        n = [np.ones_like(x)]
        levels = []
        for j in range(1, p + 1):
            saved = 0.0
            nxt, lev = [], []
            for r in range(j):
                den = right[r + 1] + left[j - r]
                t = n[r] / den
                lev.append((den, t))
                nxt.append(saved + right[r + 1] * t)
                saved = left[j - r] * t
            nxt.append(saved)
            levels.append(lev)
            n = nxt
        crow = np.arange(x.shape[0])[:, None] * control.shape[1]
        bidx = [crow + span - p + r for r in range(p + 1)]
        wflat, pflat = weights.ravel(), control.ravel()
        wg = [wflat[i] for i in bidx]
        pg = [pflat[i] for i in bidx]
        num = sum(nr * w * q for nr, w, q in zip(n, wg, pg))
        den = sum(nr * w for nr, w in zip(n, wg))
        out = num / den
        ctx.p, ctx.shapes = p, (knots.shape, control.shape)
        ctx.left, ctx.right, ctx.levels, ctx.n = left, right, levels, n
        ctx.wg, ctx.pg, ctx.den, ctx.out = wg, pg, den, out
        ctx.kidx = (rows, span)
        ctx.bidx = bidx
        return out

    @staticmethod
    def backward(ctx, g):
        p = ctx.p
        kshape, cshape = ctx.shapes
        gq = g / ctx.den
        gw = np.zeros(cshape[0] * cshape[1])
        gp = np.zeros_like(gw)
        gn = []
        for nr, w, q, idx in zip(ctx.n, ctx.wg, ctx.pg, ctx.bidx):
            diff = gq * (q - ctx.out)
            gn.append(diff * w)  # d out / d N_r = w (P - out) / den
            gw += np.bincount(idx.ravel(), weights=(diff * nr).ravel(), minlength=gw.size)
            gp += np.bincount(idx.ravel(), weights=(gq * nr * w).ravel(), minlength=gp.size)
        gleft = [None] + [np.zeros_like(g) for _ in range(p)]
        gright = [None] + [np.zeros_like(g) for _ in range(p)]
        for j in range(p, 0, -1):
            prev = [None] * j
            carry = gn[j]  # cotangent of ``saved`` flowing into slot r + 1
            for r in range(j - 1, -1, -1):
                den, t = ctx.levels[j - 1][r]
                ga = gn[r]  # slot r = saved_{r-1} + right[r+1] * t
                gt = ga * ctx.right[r + 1] + carry * ctx.left[j - r]
                gd = -gt * t / den
                gright[r + 1] += ga * t + gd
                gleft[j - r] += carry * t + gd
                prev[r] = gt / den
                carry = ga  # saved_{r-1} feeds slot r
            gn = prev
        gx = np.zeros_like(g)
        gk = np.zeros(kshape[0] * kshape[1])
        rows, span = ctx.kidx
        for j in range(1, p + 1):
            gx += gleft[j] - gright[j]
            gk += np.bincount((rows + span + 1 - j).ravel(), weights=-gleft[j].ravel(), minlength=gk.size)
            gk += np.bincount((rows + span + j).ravel(), weights=gright[j].ravel(), minlength=gk.size)
        return gx, gk.reshape(kshape), gp.reshape(cshape), gw.reshape(cshape)


@lru_cache(maxsize=32)
def _band_operator(c: int) -> np.ndarray:
    """Constant map from 2x3 spectral kernel taps to a (2C, C) banded matrix (zero padded)."""
    e = np.zeros((2 * c * c, 6))
    for o in range(2):
        for ch in range(c):
            for t in range(3):
                src = ch + t - 1
                if 0 <= src < c:
                    e[(o * c + ch) * c + src, o * 3 + t] = 1.0
    e.flags.writeable = False
    return e


def spec_conv(x: Tensor, taps: Tensor, bias: Tensor) -> Tensor:
    """Kernel-3 convolution along the channel axis producing two maps: (C,H,W) -> (2C,H,W)."""
    c = x.shape[0]
    band = ops.reshape(ops.matmul(Tensor(_band_operator(c)), ops.reshape(taps, (6, 1))), (2 * c, c))
    b = ops.take(bias, np.repeat([0, 1], c), axis=0)
    return ops.conv1x1(x, band, b)


class NukesLayer(Module):
    """Gated spline FFN: ``alpha * mix(Nuk(x)) + up * sigmoid(dw)``.

    ``uniform=True`` gives the classic KAN variant: fixed uniform knots and unit
    weights, so only control points and the mixing map are learned.
    """

    def __init__(self, channels: int, rng: np.random.Generator, degree: int = 3,
                 n_interior: int = 8, r: float = 4.0, uniform: bool = False, dtype=np.float64):
        if degree > MAX_DEGREE:
            raise DegreeUnsupported(f"degree {degree} > {MAX_DEGREE}")
        self.channels, self.degree, self.n_interior, self.r = channels, degree, n_interior, r
        self.uniform = uniform
        knots0 = clamped_uniform_knots(n_interior, degree, r)
        nb = knots0.size - degree - 1
        self.n_basis = nb
        cps = np.tile(greville(knots0, degree), (channels, 1))
        cps += rng.normal(0.0, 0.05 * r, size=cps.shape)
        self.control = param(cps, dtype)
        if uniform:
            self.fixed_knots = Tensor(np.tile(knots0, (channels, 1)).astype(dtype))
        else:
            self.knot_raw = zeros((channels, n_interior + 1), dtype)
            self.weight_raw = zeros((channels, nb), dtype)
        self.mix = init_normal(rng, (channels, channels), channels, dtype=dtype)
        self.alpha = param(np.array([0.5]), dtype)
        self.spec_taps = init_normal(rng, (2, 3), 3, dtype=dtype)
        self.spec_bias = zeros((2,), dtype)

    def knots(self) -> Tensor:
        if self.uniform:
            return self.fixed_knots
        return ncpg_knots_tensor(self.knot_raw, self.degree, self.r)

    def weights(self) -> Tensor:
        if self.uniform:
            return Tensor(np.ones((self.channels, self.n_basis), dtype=self.control.dtype))
        return ops.exp(self.weight_raw)

    def nuk(self, x: Tensor) -> Tensor:
        """Per-channel rational spline of ``x`` (C, H, W), inputs clamped to ``[-r, r]``."""
        c, h, w = x.shape
        xc = ops.clip(ops.reshape(x, (c, h * w)), -self.r, self.r)
        out = RationalSpline.apply(xc, self.knots(), self.control, self.weights(), p=self.degree)
        return ops.reshape(out, (c, h, w))

    def __call__(self, x: Tensor) -> Tensor:
        return nukes_ffn_forward(self, x)


def nukes_ffn_forward(layer: NukesLayer, x: Tensor) -> Tensor:
    if x.ndim != 3 or x.shape[0] != layer.channels:
        raise ShapeMismatch(f"NukesLayer expects ({layer.channels}, H, W), got {x.shape}")
    c = layer.channels
    gated = spec_conv(x, layer.spec_taps, layer.spec_bias)
    up, dw = gated[:c], gated[c:]
    branch = ops.mul(up, ops.sigmoid(dw))
    spline = ops.conv1x1(layer.nuk(x), layer.mix)
    return ops.add(ops.mul(spline, ops.reshape(layer.alpha, (1, 1, 1))), branch)
