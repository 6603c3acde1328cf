import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import frozen
from oracles import cos_sim, info_nce_loops
from unhig.errors import InvalidParam, ShapeMismatch, TooFewPatches, ZeroVector
from unhig.gradcore import Tape, Tensor, grad_check, ops
from unhig.losses import (
    COS_CLAMP,
    LossWeights,
    PatchCodeSet,
    adversarial_loss,
    adversarial_terms,
    cycle_loss,
    dcpm_sample,
    geometric_contrastive,
    non_degraded_loss,
    spectral_contrastive,
    total_loss,
)


def codes(q, pos, negs, tau=0.07):
    q, pos = np.atleast_2d(q).astype(float), np.atleast_2d(pos).astype(float)
    negs = np.asarray(negs, dtype=float).reshape(q.shape[0], -1, q.shape[1])
    p, n = q.shape[0], negs.shape[1]
    return PatchCodeSet(Tensor(q), Tensor(pos), Tensor(negs), np.arange(p),
                        np.zeros((p, n), int), np.zeros((p, n), int), tau)


# ---------------------------------------------------------------- cycle / non-degraded

def test_cycle_identity_is_zero(rng):
    x, y = rng.uniform(size=(31, 4, 4)), rng.uniform(size=(3, 4, 4))
    out = (None, Tensor(x), None, Tensor(y))
    assert cycle_loss(x, y, out).item() == 0.0


def test_cycle_offset_by_one(rng):
    x, y = rng.uniform(size=(31, 4, 4)), rng.uniform(size=(3, 4, 4))
    out = (None, Tensor(x + 1.0), None, Tensor(y))
    assert cycle_loss(x, y, out).item() == pytest.approx(1.0, abs=1e-12)


def test_cycle_is_order_symmetric(rng):
    x, xr = rng.uniform(size=(31, 4, 4)), rng.uniform(size=(31, 4, 4))
    y, yr = rng.uniform(size=(3, 4, 4)), rng.uniform(size=(3, 4, 4))
    perm = rng.permutation(16)
    sh = lambda a: a.reshape(a.shape[0], 16)[:, perm].reshape(a.shape)  # noqa: E731
    a = cycle_loss(x, y, (None, Tensor(xr), None, Tensor(yr))).item()
    b = cycle_loss(sh(x), sh(y), (None, Tensor(sh(xr)), None, Tensor(sh(yr)))).item()
    assert a == pytest.approx(b, abs=1e-14)
    with pytest.raises(ShapeMismatch):
        cycle_loss(x, y, (None, Tensor(y), None, Tensor(y)))


def test_non_degraded_identity_and_doubling(rng):
    x, y = np.ones((31, 4, 4)), np.ones((3, 4, 4))
    ident = lambda g, t: t  # noqa: E731
    double = lambda g, t: ops.mul(t, 2.0)  # noqa: E731
    assert non_degraded_loss(None, None, x, y, forward=ident).item() == 0.0
    # 2x on unit input: each term contributes 1
    assert non_degraded_loss(None, None, x, y, forward=double).item() == pytest.approx(2.0)
    only_h = lambda g, t: double(g, t) if t.shape[0] == 31 else t  # noqa: E731
    only_r = lambda g, t: double(g, t) if t.shape[0] == 3 else t  # noqa: E731
    both = non_degraded_loss(None, None, x, y, forward=double).item()
    assert both == pytest.approx(non_degraded_loss(None, None, x, y, forward=only_h).item()
                                 + non_degraded_loss(None, None, x, y, forward=only_r).item())


# ---------------------------------------------------------------- contrastive

def test_no_negatives_is_zero(rng):
    c = codes(rng.normal(size=(3, 5)), rng.normal(size=(3, 5)), np.zeros((3, 0, 5)))
    assert spectral_contrastive(c).item() == pytest.approx(0.0, abs=1e-15)
    assert geometric_contrastive(c).item() == pytest.approx(0.0, abs=1e-15)


def test_equal_similarity_gives_log_n_plus_one():
    q = np.array([1.0, 0.0])
    other = np.array([0.0, 1.0])
    for n in (1, 4, 9):
        c = codes(q, other, np.tile(other, (n, 1)), tau=1.0)
        assert spectral_contrastive(c, 1.0).item() == pytest.approx(math.log(n + 1), abs=1e-12)
        assert geometric_contrastive(c).item() == pytest.approx(math.log(n + 1), abs=1e-12)


def test_spectral_scalar_example():
    c = codes([1.0, 0.0], [2.0, 0.0], [[0.0, 3.0]])
    got = spectral_contrastive(c, tau_s=1.0).item()
    assert got == pytest.approx(frozen.SPEC_NCE_ORTHO, abs=1e-4)
    assert frozen.SPEC_NCE_ORTHO == pytest.approx(0.1889, abs=1e-4)
    # exactly: the cosine is clamped to 1 - COS_CLAMP, so the parallel pair sits at a tiny angle
    theta = math.acos(1.0 - COS_CLAMP)
    exact = -math.log(math.exp(-theta) / (math.exp(-theta) + math.exp(-math.pi / 2)))
    assert got == pytest.approx(exact, abs=1e-12)


def test_geometric_scalar_example():
    f = np.array([0.3, -1.2, 0.5])
    c = codes(f, f, [-f], tau=1.0)
    assert geometric_contrastive(c).item() == pytest.approx(frozen.GEO_NCE_ANTI, abs=1e-12)
    assert frozen.GEO_NCE_ANTI == pytest.approx(0.1269, abs=1e-4)


@given(st.floats(0.01, 100), st.integers(0, 2 ** 31))
def test_geometric_scale_invariance(k, seed):
    rng = np.random.default_rng(seed)
    q, p, n = rng.normal(size=(2, 4)), rng.normal(size=(2, 4)), rng.normal(size=(2, 3, 4))
    a = geometric_contrastive(codes(q, p, n)).item()
    b = geometric_contrastive(codes(q * k, p, n * k)).item()
    assert a == pytest.approx(b, rel=1e-9, abs=1e-12)


def test_contrastive_matches_loops(rng):
    q, p, n = rng.normal(size=(4, 6)), rng.normal(size=(4, 6)), rng.normal(size=(4, 5, 6))
    geo = info_nce_loops(q, p, n, lambda u, v: math.exp(cos_sim(u, v) / 0.07))
    ang = lambda u, v: math.acos(max(-1.0, min(1.0, cos_sim(u, v))))  # noqa: E731
    spec = info_nce_loops(q, p, n, lambda u, v: math.exp(-ang(u, v) / 0.5))
    c = codes(q, p, n)
    assert geometric_contrastive(c).item() == pytest.approx(geo, rel=1e-10)
    assert spectral_contrastive(c, 0.5).item() == pytest.approx(spec, rel=1e-9)


@given(st.integers(0, 2 ** 31), st.floats(0.05, 0.5))
def test_contrastive_monotonicity(seed, step):
    rng = np.random.default_rng(seed)
    q, p, n = rng.normal(size=(1, 4)), rng.normal(size=(1, 4)), rng.normal(size=(1, 3, 4))
    base_s = spectral_contrastive(codes(q, p, n), 0.5).item()
    base_g = geometric_contrastive(codes(q, p, n)).item()
    # move the positive towards the query: loss must not increase
    p2 = p + step * (q / np.linalg.norm(q) * np.linalg.norm(p) - p)
    assert spectral_contrastive(codes(q, p2, n), 0.5).item() <= base_s + 1e-12
    assert geometric_contrastive(codes(q, p2, n)).item() <= base_g + 1e-12
    # move a negative towards the query: loss must not decrease
    n2 = n.copy()
    n2[0, 0] = n[0, 0] + step * (q[0] / np.linalg.norm(q) * np.linalg.norm(n[0, 0]) - n[0, 0])
    assert spectral_contrastive(codes(q, p, n2), 0.5).item() >= base_s - 1e-12
    assert geometric_contrastive(codes(q, p, n2)).item() >= base_g - 1e-12


def test_contrastive_nonnegative(rng):
    for _ in range(10):
        c = codes(rng.normal(size=(3, 4)), rng.normal(size=(3, 4)), rng.normal(size=(3, 2, 4)))
        assert spectral_contrastive(c).item() >= 0 and geometric_contrastive(c).item() >= 0


def test_zero_code_rejected():
    with pytest.raises(ZeroVector):
        geometric_contrastive(codes([0.0, 0.0], [1.0, 0.0], [[0.0, 1.0]]))
    with pytest.raises(InvalidParam):
        codes([1.0, 0.0], [1.0, 0.0], [[0.0, 1.0]], tau=0.0)


# ---------------------------------------------------------------- DCPM sampling

def test_dcpm_no_negatives(rng):
    a, b = rng.normal(size=(4, 4, 4)), rng.normal(size=(4, 4, 4))
    s = dcpm_sample(a, b, n_patches=5, n_negatives=0)
    assert s.negatives.shape == (5, 0, 4)


def test_dcpm_deterministic_and_positive_alignment(rng):
    a, b = rng.normal(size=(16, 6)), rng.normal(size=(16, 6))
    s1 = dcpm_sample(a, b, 8, 5, seed=7)
    s2 = dcpm_sample(a, b, 8, 5, seed=7)
    assert np.array_equal(s1.query_index, s2.query_index) and np.array_equal(s1.neg_index, s2.neg_index)
    assert np.array_equal(s1.query.data, a[s1.query_index])
    assert np.array_equal(s1.positive.data, b[s1.query_index])


@given(st.integers(2, 30), st.integers(0, 2 ** 31), st.data())
def test_dcpm_negatives_avoid_query(s, seed, data):
    n_p = data.draw(st.integers(1, s))
    n_n = data.draw(st.integers(0, 12))
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(s, 3)), rng.normal(size=(s, 3))
    cs = dcpm_sample(a, b, n_p, n_n, seed=seed)
    assert np.all(cs.neg_index != cs.query_index[:, None])
    both = np.concatenate([a, b])
    ref = both[cs.neg_index + cs.neg_domain * s]
    assert np.array_equal(cs.negatives.data.reshape(ref.shape), ref)


def test_dcpm_uses_both_domains(rng):
    a, b = rng.normal(size=(64, 3)), rng.normal(size=(64, 3))
    cs = dcpm_sample(a, b, 64, 15, seed=0)
    assert set(np.unique(cs.neg_domain)) == {0, 1}


def test_dcpm_too_few_patches(rng):
    with pytest.raises(TooFewPatches):
        dcpm_sample(rng.normal(size=(4, 3)), rng.normal(size=(4, 3)), n_patches=5)
    with pytest.raises(ShapeMismatch):
        dcpm_sample(rng.normal(size=(4, 3)), rng.normal(size=(5, 3)), n_patches=2)


# ---------------------------------------------------------------- adversarial

def test_half_scores():
    half = Tensor(np.full((1, 2, 2), 0.5))
    gen, disc = adversarial_terms(half, half)
    assert disc.item() == pytest.approx(frozen.DISC_HALF, abs=1e-12)
    assert frozen.DISC_HALF == pytest.approx(-1.3863, abs=1e-4)
    assert gen.item() == pytest.approx(math.log(2.0), abs=1e-12)
    const = lambda img: half  # noqa: E731
    g2, d2 = adversarial_loss(const, const, None, None, None, None)
    assert d2.item() == pytest.approx(2 * frozen.DISC_HALF, abs=1e-12)


def test_perfect_discriminator():
    _, disc = adversarial_terms(Tensor(np.ones(4)), Tensor(np.zeros(4)))
    assert -1e-6 < disc.item() <= 0.0


@given(st.floats(0.01, 0.98), st.floats(0.001, 0.01))
def test_gen_term_monotone(p, dp):
    r = Tensor(np.full(3, 0.5))
    g1, _ = adversarial_terms(r, Tensor(np.full(3, p)))
    g2, _ = adversarial_terms(r, Tensor(np.full(3, p + dp)))
    assert g2.item() < g1.item()


# ---------------------------------------------------------------- total

def test_total_all_ones():
    assert total_loss([1.0] * 5).item() == pytest.approx(frozen.TOTAL_ALL_ONES)
    assert total_loss([1.0] * 5, LossWeights(0, 0, 0, 0, 0)).item() == 0.0
    with pytest.raises(InvalidParam):
        LossWeights(cyc=-1.0)
    with pytest.raises(InvalidParam):
        total_loss([1.0] * 4)


@given(st.lists(st.floats(0, 5), min_size=5, max_size=5), st.lists(st.floats(-3, 3), min_size=5, max_size=5),
       st.floats(0, 4))
def test_total_linear_in_weights(w, parts, k):
    a = total_loss(parts, LossWeights(*w)).item()
    b = total_loss(parts, LossWeights(*[k * v for v in w])).item()
    assert b == pytest.approx(k * a, rel=1e-12, abs=1e-12)


def test_total_gradient_is_weighted_sum(rng):
    x0 = rng.normal(size=5)
    fns = [lambda t: ops.sum(ops.mul(t, t)), lambda t: ops.sum(ops.exp(t)), lambda t: ops.sum(ops.sigmoid(t)),
           lambda t: ops.sum(ops.mul(t, 3.0)), lambda t: ops.sum(ops.gelu(t))]
    w = LossWeights()

    def grad(fn):
        t = Tensor(x0.copy(), requires_grad=True)
        with Tape() as tape:
            out = fn(t)
        tape.backward(out)
        return t.grad

    g_total = grad(lambda t: total_loss([f(t) for f in fns], w))
    g_parts = sum(lam * grad(f) for lam, f in zip(w.as_tuple(), fns))
    assert np.abs(g_total - g_parts).max() < 1e-12
    rep = grad_check(lambda t: total_loss([f(t) for f in fns], w), Tensor(x0.copy()))
    assert rep.passed
