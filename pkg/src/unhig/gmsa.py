"""Spectral self-attention with a dynamic Gabor frequency branch, and the Nuk-MSA block."""
from __future__ import annotations

import math

import numpy as np

from .errors import InvalidParam, ShapeMismatch
from .gradcore import Function, Module, Tensor, init_normal, ones, ops, param, zeros
from .gradcore.ops import primitive
from .nukes import NukesLayer

SOFTPLUS_INV_1 = math.log(math.e - 1.0)


def _grid(k: int):
    half = (k - 1) // 2
    r = np.arange(-half, half + 1, dtype=np.float64)
    y, x = np.meshgrid(r, r, indexing="ij")  # kernel[row=y, col=x]
    return x, y


def _exponent(x, y, f, theta, sigma, alt):
    xt = x * np.cos(theta) + y * np.sin(theta)
    yt = -x * np.sin(theta) + y * np.cos(theta)
    if alt:
        e = (xt ** 2 + (yt / f) ** 2) / (2 * sigma ** 2)
    else:
        e = (xt ** 2 + (yt ** 2 / f) ** 2) / (2 * sigma ** 2)
    return e, xt, yt


def gabor_kernel(f: float, theta: float, sigma: float, k: int, alt: bool = False) -> np.ndarray:
    """``exp(-(x_t^2 + (y_t^2 / f)^2) / (2 sigma^2))`` on the centred k x k integer grid.

    ``alt=True`` uses the conventional ``(y_t / f)^2`` term instead.
    """
    if not (f > 0 and sigma > 0) or k < 1 or k % 2 == 0:
        raise InvalidParam(f"need f > 0, sigma > 0 and odd k (got f={f}, sigma={sigma}, k={k})")
    x, y = _grid(k)
    e, _, _ = _exponent(x, y, f, theta, sigma, alt)
    return np.exp(-e)


@primitive
class GaborKernels(Function):
    """Bank of kernels from per-kernel frequency ``f`` (M,) and orientation ``theta`` (M,)."""

    name = "gabor_kernel"

    @staticmethod
    def forward(ctx, f, theta, sigma=2.0, k=7, alt=False):
        if np.any(f <= 0) or sigma <= 0 or k % 2 == 0:
            raise InvalidParam("gabor kernels need f > 0, sigma > 0, odd k")
        x, y = _grid(k)
        fb, tb = f[:, None, None], theta[:, None, None]
        e, xt, yt = _exponent(x, y, fb, tb, sigma, alt)
        g = np.exp(-e)
        ctx.g, ctx.xt, ctx.yt, ctx.f, ctx.sigma, ctx.alt = g, xt, yt, fb, sigma, alt
        return g

    @staticmethod
    def backward(ctx, gout):
        g, a, b, f, s2 = ctx.g, ctx.xt, ctx.yt, ctx.f, ctx.sigma ** 2
        if ctx.alt:
            de_df = -(b ** 2) / (f ** 3 * s2)
            de_dt = (a * b - a * b / f ** 2) / s2
        else:
            de_df = -(b ** 4) / (f ** 3 * s2)
            de_dt = (a * b - 2.0 * a * b ** 3 / f ** 2) / s2
        w = -gout * g
        return (w * de_df).sum(axis=(1, 2)), (w * de_dt).sum(axis=(1, 2))


class MsaParams(Module):
    def __init__(self, channels: int, rng: np.random.Generator, heads: int = 1, dtype=np.float64):
        if heads < 1 or channels % heads:
            raise ShapeMismatch(f"channels {channels} not divisible by heads {heads}")
        self.channels, self.heads = channels, heads
        self.wq = init_normal(rng, (channels, channels), channels, dtype=dtype)
        self.wk = init_normal(rng, (channels, channels), channels, dtype=dtype)
        self.wv = init_normal(rng, (channels, channels), channels, dtype=dtype)


class GaborBank(Module):
    """Dynamic Gabor kernels plus the 1x1 map from C*M responses back to C channels."""

    def __init__(self, channels: int, rng: np.random.Generator, n_kernels: int = 4, ksize: int = 7,
                 sigma: float = 2.0, alt_form: bool = False, dtype=np.float64):
        if ksize % 2 == 0 or sigma <= 0:
            raise InvalidParam("kernel size must be odd and sigma positive")
        self.channels, self.n_kernels, self.ksize, self.sigma, self.alt_form = (
            channels, n_kernels, ksize, sigma, alt_form)
        self.freq_w = init_normal(rng, (n_kernels, channels), channels, gain=0.1, dtype=dtype)
        self.freq_b = param(np.full(n_kernels, SOFTPLUS_INV_1), dtype)
        self.theta = param(np.pi * np.arange(n_kernels) / n_kernels, dtype)
        # responses of the unnormalised kernels are ~10x the input; start the branch quiet
        self.out_w = init_normal(rng, (channels, channels * n_kernels), channels * n_kernels, gain=0.05, dtype=dtype)
        self.out_b = zeros((channels,), dtype)

    def frequencies(self, x: Tensor) -> Tensor:
        """``softplus(W . GAP(x) + b)`` - one frequency per kernel, predicted from the scene."""
        gap = ops.reshape(ops.mean(x, axis=(1, 2)), (x.shape[0], 1))
        z = ops.add(ops.reshape(ops.matmul(self.freq_w, gap), (self.n_kernels,)), self.freq_b)
        return ops.softplus(z)

    def kernels(self, freqs: Tensor) -> Tensor:
        return GaborKernels.apply(freqs, self.theta, sigma=self.sigma, k=self.ksize, alt=self.alt_form)


def qkv(x: Tensor, params: MsaParams):
    c, h, w = x.shape
    if c != params.channels:
        raise ShapeMismatch(f"MSA expects {params.channels} channels, got {c}")
    x2 = ops.reshape(x, (c, h * w))
    return (ops.matmul(params.wq, x2), ops.matmul(params.wk, x2), ops.matmul(params.wv, x2))


def attention(q2: Tensor, k2: Tensor, heads: int = 1) -> Tensor:
    """Per-head channel attention ``softmax_axis0(K Q^T / sqrt(HW))``, shape (heads, d, d).

    Entry ``[a, b]`` pairs key channel ``a`` with query channel ``b``; each column sums to 1.
    """
    c, s = q2.shape
    d = c // heads
    qh = ops.reshape(q2, (heads, d, s))
    kh = ops.reshape(k2, (heads, d, s))
    logits = ops.mul(ops.matmul(kh, ops.transpose(qh, (0, 2, 1))), 1.0 / math.sqrt(s))
    return ops.softmax(logits, axis=1)


def _msa_from_qkv(q2, k2, v2, heads, shape):
    c, h, w = shape
    d = c // heads
    a = attention(q2, k2, heads)
    vh = ops.reshape(v2, (heads, d, h * w))
    out = ops.matmul(ops.transpose(a, (0, 2, 1)), vh)  # out[b] = sum_a A[a, b] V[a]
    return ops.reshape(out, (c, h, w))


def spectral_msa(x: Tensor, params: MsaParams) -> Tensor:
    q2, k2, v2 = qkv(x, params)
    return _msa_from_qkv(q2, k2, v2, params.heads, x.shape)


def gabor_branch(v: Tensor, bank: GaborBank, freqs: Tensor | None = None,
                 kernels: Tensor | None = None) -> Tensor:
    """``Conv1x1(GELU(V * g_m))`` over all kernels; ``kernels`` (M, k, k) overrides the bank."""
    c = v.shape[0]
    if c != bank.channels:
        raise ShapeMismatch(f"Gabor branch expects {bank.channels} channels, got {c}")
    if kernels is None:
        kernels = bank.kernels(bank.frequencies(v) if freqs is None else freqs)
    m = kernels.shape[0]
    if bank.out_w.shape[1] != c * m:
        raise ShapeMismatch(f"output map expects {bank.out_w.shape[1]} responses, got {c * m}")
    resp = ops.conv2d_multi(v, kernels, padding="reflect")  # channel c*M + m
    return ops.conv1x1(ops.gelu(resp), bank.out_w, bank.out_b)


def gmsa_forward(x: Tensor, params: MsaParams, bank: GaborBank | None) -> Tensor:
    """MSA branch plus the Gabor branch on ``V``, frequencies predicted from ``x``."""
    q2, k2, v2 = qkv(x, params)
    msa = _msa_from_qkv(q2, k2, v2, params.heads, x.shape)
    if bank is None:
        return msa
    v = ops.reshape(v2, x.shape)
    fry = gabor_branch(v, bank, freqs=bank.frequencies(x))
    return ops.add(fry, msa)


class NukMsaBlock(Module):
    """Pre-norm residual pair: ``y = x + G-MSA(LN(x))``, ``out = y + Nukes(LN(y))``."""

    def __init__(self, channels: int, rng: np.random.Generator, heads: int = 1, use_gabor: bool = True,
                 uniform_kan: bool = False, n_kernels: int = 4, ksize: int = 7, sigma: float = 2.0,
                 degree: int = 3, n_interior: int = 8, r: float = 4.0, alt_form: bool = False,
                 dtype=np.float64):
        self.channels = channels
        self.ln1_g = ones((channels,), dtype)
        self.ln1_b = zeros((channels,), dtype)
        self.msa = MsaParams(channels, rng, heads, dtype)
        self.bank = GaborBank(channels, rng, n_kernels, ksize, sigma, alt_form, dtype) if use_gabor else None
        self.ln2_g = ones((channels,), dtype)
        self.ln2_b = zeros((channels,), dtype)
        self.ffn = NukesLayer(channels, rng, degree, n_interior, r, uniform=uniform_kan, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return nuk_msa_block(self, x)


def nuk_msa_block(block: NukMsaBlock, x: Tensor) -> Tensor:
    if x.ndim != 3 or x.shape[0] != block.channels:
        raise ShapeMismatch(f"block expects ({block.channels}, H, W), got {x.shape}")
    y = ops.add(x, gmsa_forward(ops.layer_norm(x, block.ln1_g, block.ln1_b), block.msa, block.bank))
    return ops.add(y, block.ffn(ops.layer_norm(y, block.ln2_g, block.ln2_b)))
