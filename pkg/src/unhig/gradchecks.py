"""Finite-difference check cases for every primitive, the main layers and every loss.

Importing this module fills :data:`unhig.gradcore.REGISTRY`.  Each case builds a
scalar function (a random weighted sum of the op's output) and its inputs.
"""
from __future__ import annotations

import numpy as np

from .gmsa import GaborBank, GaborKernels, NukMsaBlock, gmsa_forward, MsaParams
from .gradcore import REGISTRY, Tensor, ops, register
from .gradcore.ops import PRIMITIVES
from .losses import (
    PatchCodeSet,
    adversarial_loss,
    cycle_loss,
    geometric_contrastive,
    non_degraded_loss,
    spectral_contrastive,
)
from .nukes import NukesLayer, RationalSpline, ncpg_knots_tensor
from .nukesformer import Discriminator, Generator, GeneratorConfig, ProjectionHead, cycle_pass


def _t(rng, *shape, scale=1.0, shift=0.0):
    return Tensor(rng.normal(size=shape) * scale + shift)


def _u(rng, lo, hi, *shape):
    return Tensor(rng.uniform(lo, hi, size=shape))


def _weighted(fn, shape_rng):
    """Wrap ``fn(*xs)`` into a scalar by a fixed random weighting of its output."""
    cache = {}

    def f(*xs):
        out = fn(*xs)
        if "w" not in cache:
            cache["w"] = shape_rng.normal(size=out.shape)
        return ops.sum(ops.mul(out, cache["w"]))
    return f


def _unary(name, fn, make):
    @register(f"op:{name}", "primitive")
    def build(rng):
        x = make(rng)
        return _weighted(fn, rng), [x]


def _binary(name, fn, make_a, make_b):
    @register(f"op:{name}", "primitive")
    def build(rng):
        return _weighted(fn, rng), [make_a(rng), make_b(rng)]


_binary("add", ops.add, lambda r: _t(r, 3, 4), lambda r: _t(r, 4))
_binary("sub", ops.sub, lambda r: _t(r, 3, 4), lambda r: _t(r, 3, 1))
_binary("mul", ops.mul, lambda r: _t(r, 3, 4), lambda r: _t(r, 1, 4))
_binary("div", ops.div, lambda r: _t(r, 3, 4), lambda r: _u(r, 0.5, 2.0, 3, 4))
_binary("safe_div", ops.safe_div, lambda r: _t(r, 3, 4), lambda r: _u(r, 0.5, 2.0, 4))
_binary("matmul", ops.matmul, lambda r: _t(r, 2, 3, 4), lambda r: _t(r, 4, 5))
_unary("neg", ops.neg, lambda r: _t(r, 5))
_unary("power", lambda a: ops.power(a, 1.7), lambda r: _u(r, 0.5, 2.0, 5))
_unary("exp", ops.exp, lambda r: _t(r, 5))
_unary("log", ops.log, lambda r: _u(r, 0.5, 3.0, 5))
_unary("sigmoid", ops.sigmoid, lambda r: _t(r, 6, scale=2.0))
_unary("gelu", ops.gelu, lambda r: _t(r, 6, scale=2.0))
_unary("softplus", ops.softplus, lambda r: _t(r, 6, scale=2.0))
_unary("leaky_relu", ops.leaky_relu, lambda r: Tensor(np.array([-1.3, -0.4, 0.2, 0.9, 2.1])))
_unary("clip", lambda a: ops.clip(a, -1.0, 1.0), lambda r: Tensor(np.array([-1.7, -0.5, 0.1, 0.6, 1.4])))
_unary("arccos", ops.arccos, lambda r: _u(r, -0.9, 0.9, 5))
_unary("sum", lambda a: ops.sum(a, axis=1), lambda r: _t(r, 3, 4))
_unary("norm", lambda a: ops.norm(a, axis=-1), lambda r: _t(r, 3, 4))
_unary("softmax", lambda a: ops.softmax(a, axis=0), lambda r: _t(r, 4, 3))
_unary("cumsum", lambda a: ops.cumsum(a, axis=-1), lambda r: _t(r, 2, 5))
_unary("reshape", lambda a: ops.reshape(a, (4, 3)), lambda r: _t(r, 2, 6))
_unary("transpose", lambda a: ops.transpose(a, (2, 0, 1)), lambda r: _t(r, 2, 3, 4))
_unary("slice", lambda a: ops.getitem(a, (slice(1, None), np.array([0, 2, 2]))), lambda r: _t(r, 3, 4))
_unary("avg_pool2", ops.avg_pool2, lambda r: _t(r, 2, 4, 4))
_unary("upsample2", ops.upsample2, lambda r: _t(r, 2, 3, 2))


@register("op:gather", "primitive")
def _gather(rng):
    idx = rng.integers(0, 5, size=(3, 4, 2))
    return _weighted(lambda a: ops.gather(a, idx), rng), [_t(rng, 3, 5)]


@register("op:concat", "primitive")
def _concat(rng):
    return _weighted(lambda a, b: ops.concat([a, b], axis=1), rng), [_t(rng, 2, 3), _t(rng, 2, 2)]


@register("op:layer_norm", "primitive")
def _ln(rng):
    return (_weighted(lambda x, g, b: ops.layer_norm(x, g, b), rng),
            [_t(rng, 4, 3, 3), _t(rng, 4, shift=1.0), _t(rng, 4)])


@register("op:conv1x1", "primitive")
def _c1(rng):
    return _weighted(lambda x, w, b: ops.conv1x1(x, w, b), rng), [_t(rng, 3, 4, 4), _t(rng, 5, 3), _t(rng, 5)]


@register("op:conv2d", "primitive")
def _c2(rng):
    return (_weighted(lambda x, w, b: ops.conv2d(x, w, b, stride=2, padding=1), rng),
            [_t(rng, 2, 6, 6), _t(rng, 3, 2, 4, 4), _t(rng, 3)])


@register("op:conv2d_depthwise", "primitive")
def _cdw(rng):
    return (_weighted(lambda x, k: ops.conv2d_depthwise(x, k, padding="reflect"), rng),
            [_t(rng, 2, 5, 6), _t(rng, 2, 3, 3)])


@register("op:conv2d_multi", "primitive")
def _cm(rng):
    return (_weighted(lambda x, k: ops.conv2d_multi(x, k, padding="reflect"), rng),
            [_t(rng, 2, 6, 6), _t(rng, 3, 5, 5)])


@register("op:gabor_kernel", "primitive")
def _gk(rng):
    return (_weighted(lambda f, th: GaborKernels.apply(f, th, sigma=2.0, k=7), rng),
            [_u(rng, 0.5, 2.0, 3), _u(rng, 0.0, np.pi, 3)])


@register("op:rational_spline", "primitive")
def _rs(rng):
    p, c, g = 3, 2, 8
    nb = g + p + 1

    def f(x, raw, ctrl, w):
        return RationalSpline.apply(x, ncpg_knots_tensor(raw, p, 4.0), ctrl, w, p=p)
    return (_weighted(f, rng),
            [_u(rng, -3.9, 3.9, c, 9), _t(rng, c, g + 1, scale=0.5), _t(rng, c, nb), _u(rng, 0.5, 2.0, c, nb)])


# ---------------------------------------------------------------- layers

def _module_case(module, fn, extra_inputs, rng, jitter=0.1):
    """Check a module's parameters plus ``extra_inputs`` through ``fn(*extra_inputs)``."""
    params = [p for _, p in module.named_parameters()]
    for p in params:  # move off symmetric initial values (zeros, ones)
        p.data = p.data + jitter * rng.normal(size=p.shape)
    n = len(extra_inputs)
    return _weighted(lambda *xs: fn(*xs[:n]), rng), list(extra_inputs) + params


@register("layer:nukes", "layer")
def _nukes(rng):
    layer = NukesLayer(3, rng)
    return _module_case(layer, layer, [_t(rng, 3, 4, 4, scale=1.5)], rng)


@register("layer:nukes_uniform", "layer")
def _nukes_u(rng):
    layer = NukesLayer(3, rng, uniform=True)
    return _module_case(layer, layer, [_t(rng, 3, 4, 4, scale=1.5)], rng)


@register("layer:gmsa", "layer")
def _gmsa(rng):
    msa, bank = MsaParams(4, rng), GaborBank(4, rng, n_kernels=2, ksize=5)

    class Both:
        def named_parameters(self):
            yield from msa.named_parameters("msa.")
            yield from bank.named_parameters("bank.")
    return _module_case(Both(), lambda x: gmsa_forward(x, msa, bank), [_t(rng, 4, 4, 4)], rng)


@register("layer:nuk_msa_block", "layer", max_coords=6)
def _block(rng):
    blk = NukMsaBlock(4, rng, n_kernels=2, ksize=5)
    return _module_case(blk, blk, [_t(rng, 4, 4, 4)], rng)


@register("layer:generator_8x8", "layer", max_coords=2)
def _gen(rng):
    cfg = GeneratorConfig(3, 5, base_channels=4, n_kernels=2, ksize=5)
    g = Generator(cfg, rng)
    return _module_case(g, g, [_u(rng, 0.0, 1.0, 3, 8, 8)], rng, jitter=0.05)


@register("layer:generator_bypass", "layer", max_coords=2)
def _gen_b(rng):
    cfg = GeneratorConfig(3, 5, base_channels=4, n_kernels=2, ksize=5)
    g = Generator(cfg, rng)
    return _module_case(g, lambda x: g(x, bypass=True), [_u(rng, 0.0, 1.0, 5, 4, 4)], rng, jitter=0.05)


@register("layer:discriminator", "layer", max_coords=8)
def _disc(rng):
    d = Discriminator(3, rng, width=4)
    return _module_case(d, d, [_u(rng, 0.0, 1.0, 3, 8, 8)], rng)


@register("layer:projection_head", "layer")
def _head(rng):
    h = ProjectionHead(4, rng, width=6)
    return _module_case(h, h, [_t(rng, 5, 4)], rng)


# ---------------------------------------------------------------- losses

def _tiny_generators(rng):
    g_rh = Generator(GeneratorConfig(3, 5, base_channels=2, stage_blocks=(0, 1, 0), n_kernels=1, ksize=3), rng)
    g_hr = Generator(GeneratorConfig(5, 3, base_channels=2, stage_blocks=(0, 1, 0), n_kernels=1, ksize=3), rng)
    return g_rh, g_hr


@register("loss:cycle", "loss", max_coords=3)
def _l_cyc(rng):
    g_rh, g_hr = _tiny_generators(rng)

    def f(x, y):
        return cycle_loss(x, y, cycle_pass(x, y, g_rh, g_hr))
    return _module_case(_Pair(g_rh, g_hr), f, [_u(rng, 0, 1, 5, 4, 4), _u(rng, 0, 1, 3, 4, 4)], rng, 0.05)


@register("loss:non_degraded", "loss", max_coords=3)
def _l_nde(rng):
    g_rh, g_hr = _tiny_generators(rng)
    f = lambda x, y: non_degraded_loss(g_rh, g_hr, x, y)  # noqa: E731
    return _module_case(_Pair(g_rh, g_hr), f, [_u(rng, 0, 1, 5, 4, 4), _u(rng, 0, 1, 3, 4, 4)], rng, 0.05)


@register("loss:adversarial", "loss", max_coords=6)
def _l_adv(rng):
    d_h, d_r = Discriminator(5, rng, width=2), Discriminator(3, rng, width=2)

    def f(x, y, xf, yf):
        gen, disc = adversarial_loss(d_h, d_r, x, y, xf, yf)
        return ops.add(gen, ops.mul(disc, 0.7))
    ins = [_u(rng, 0, 1, 5, 8, 8), _u(rng, 0, 1, 3, 8, 8), _u(rng, 0, 1, 5, 8, 8), _u(rng, 0, 1, 3, 8, 8)]
    return _module_case(_Pair(d_h, d_r), f, ins, rng)


def _codes(rng, p=4, n=3, d=5):
    return [_t(rng, p, d), _t(rng, p, d), _t(rng, p, n, d)]


def _code_set(q, pos, neg, tau=0.5):
    p, n = neg.shape[:2]
    return PatchCodeSet(q, pos, neg, np.arange(p), np.zeros((p, n), int), np.zeros((p, n), int), tau)


@register("loss:spectral_contrastive", "loss")
def _l_spec(rng):
    return lambda q, pos, neg: spectral_contrastive(_code_set(q, pos, neg), 0.5), _codes(rng)


@register("loss:geometric_contrastive", "loss")
def _l_geo(rng):
    return lambda q, pos, neg: geometric_contrastive(_code_set(q, pos, neg, 0.3)), _codes(rng)


class _Pair:
    def __init__(self, a, b):
        self.a, self.b = a, b

    def named_parameters(self):
        yield from self.a.named_parameters("a.")
        yield from self.b.named_parameters("b.")


def primitive_coverage() -> tuple[set, set]:
    """(registered primitive names, primitives lacking a check case)."""
    names = set(PRIMITIVES)
    covered = {c.name.split(":", 1)[1] for c in REGISTRY.values() if c.kind == "primitive"}
    return names, names - covered
