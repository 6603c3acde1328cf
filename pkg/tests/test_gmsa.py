import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import frozen
from oracles import conv_reflect_loops, gabor_loops, spectral_attention_loops
from unhig.errors import InvalidParam, ShapeMismatch
from unhig.gmsa import (
    GaborBank,
    MsaParams,
    NukMsaBlock,
    attention,
    gabor_branch,
    gabor_kernel,
    gmsa_forward,
    nuk_msa_block,
    qkv,
    spectral_msa,
)
from unhig.gradcore import Tensor, grad_check, ops


def test_single_channel_attention_is_identity(rng):
    params = MsaParams(1, rng)
    x = Tensor(rng.normal(size=(1, 3, 3)))
    _, _, v2 = qkv(x, params)
    assert np.allclose(spectral_msa(x, params).data.reshape(1, -1), v2.data, atol=1e-14)


def test_attention_columns_sum_to_one(rng):
    params = MsaParams(6, rng)
    q2, k2, _ = qkv(Tensor(rng.normal(size=(6, 4, 4))), params)
    a = attention(q2, k2).data[0]
    assert np.abs(a.sum(axis=0) - 1.0).max() < 1e-12
    assert a.min() > 0 and a.max() < 1


def test_msa_matches_loop_oracle(rng):
    params = MsaParams(4, rng)
    x = rng.normal(size=(4, 2, 2))
    ref, ref_att = spectral_attention_loops(x, params.wq.data, params.wk.data, params.wv.data)
    assert np.abs(spectral_msa(Tensor(x), params).data - ref).max() < 1e-10
    q2, k2, _ = qkv(Tensor(x), params)
    assert np.abs(attention(q2, k2).data[0] - ref_att).max() < 1e-12


def test_multi_head_split(rng):
    params = MsaParams(4, rng, heads=2)
    q2, k2, _ = qkv(Tensor(rng.normal(size=(4, 3, 3))), params)
    assert attention(q2, k2, heads=2).shape == (2, 2, 2)
    with pytest.raises(ShapeMismatch):
        MsaParams(5, rng, heads=2)


def test_msa_is_pixel_permutation_equivariant(rng):
    params = MsaParams(3, rng)
    x = rng.normal(size=(3, 4, 4))
    perm = rng.permutation(16)
    xp = x.reshape(3, 16)[:, perm].reshape(3, 4, 4)
    out = spectral_msa(Tensor(x), params).data.reshape(3, 16)
    outp = spectral_msa(Tensor(xp), params).data.reshape(3, 16)
    assert np.abs(out[:, perm] - outp).max() < 1e-12


# ---------------------------------------------------------------- Gabor kernels

@given(st.floats(0.05, 5), st.floats(-7, 7), st.floats(0.3, 5), st.sampled_from([1, 3, 5, 7]), st.booleans())
def test_gabor_center_is_one(f, theta, sigma, k, alt):
    g = gabor_kernel(f, theta, sigma, k, alt)
    assert g[k // 2, k // 2] == 1.0
    assert np.all(np.isfinite(g)) and g.max() <= 1.0


def test_gabor_scalar_value():
    # sigma = 2 puts x = sigma on the grid at column centre + 2
    g = gabor_kernel(1.0, 0.0, 2.0, 7)
    assert g[3, 5] == pytest.approx(frozen.GABOR_AT_SIGMA, abs=1e-15)
    assert frozen.GABOR_AT_SIGMA == pytest.approx(0.60653, abs=1e-5)


@given(st.floats(0.1, 4), st.floats(-3, 3))
def test_gabor_periodic_in_theta(f, theta):
    a = gabor_kernel(f, theta, 2.0, 7)
    b = gabor_kernel(f, theta + 2 * math.pi, 2.0, 7)
    assert np.abs(a - b).max() < 1e-12


@pytest.mark.parametrize("alt", [False, True])
def test_gabor_matches_loops(alt):
    for f, th in [(0.7, 0.3), (1.9, 2.2), (1.0, -1.0)]:
        assert np.abs(gabor_kernel(f, th, 1.5, 5, alt) - gabor_loops(f, th, 1.5, 5, alt)).max() < 1e-14


def test_gabor_continuous_in_frequency():
    base = gabor_kernel(1.3, 0.4, 2.0, 7)
    for d in (1e-3, 1e-4, 1e-5):
        change = np.abs(gabor_kernel(1.3 + d, 0.4, 2.0, 7) - base).max()
        assert change < 50 * d


def test_gabor_invalid():
    with pytest.raises(InvalidParam):
        gabor_kernel(0.0, 0.0, 1.0, 7)
    with pytest.raises(InvalidParam):
        gabor_kernel(1.0, 0.0, 1.0, 6)
    with pytest.raises(InvalidParam):
        GaborBank(4, np.random.default_rng(0), ksize=4)


# ---------------------------------------------------------------- Gabor branch

def test_delta_kernel_branch(rng):
    bank = GaborBank(3, rng, n_kernels=1, ksize=3)
    delta = np.zeros((1, 3, 3))
    delta[0, 1, 1] = 1.0
    v = Tensor(rng.normal(size=(3, 4, 4)))
    out = gabor_branch(v, bank, kernels=Tensor(delta)).data
    ref = ops.conv1x1(ops.gelu(v), bank.out_w, bank.out_b).data
    assert np.abs(out - ref).max() < 1e-12


def test_zero_input_gives_bias(rng):
    bank = GaborBank(3, rng, n_kernels=2, ksize=5)
    bank.out_b.data[:] = [0.1, -0.2, 0.3]
    out = gabor_branch(Tensor(np.zeros((3, 4, 4))), bank).data
    assert np.abs(out - bank.out_b.data[:, None, None]).max() < 1e-15


def test_branch_matches_sliding_window(rng):
    bank = GaborBank(2, rng, n_kernels=2, ksize=3)
    v = rng.normal(size=(2, 5, 5))
    kern = np.stack([gabor_kernel(0.8, 0.3, 1.0, 3), gabor_kernel(1.6, 1.1, 1.0, 3)])
    resp = np.stack([conv_reflect_loops(v[c], kern[m]) for c in range(2) for m in range(2)])
    gel = 0.5 * resp * (1 + np.vectorize(math.erf)(resp / math.sqrt(2)))
    ref = np.einsum("oc,chw->ohw", bank.out_w.data, gel) + bank.out_b.data[:, None, None]
    out = gabor_branch(Tensor(v), bank, kernels=Tensor(kern)).data
    assert np.abs(out - ref).max() < 1e-10


def test_branch_shape_checks(rng):
    bank = GaborBank(3, rng)
    with pytest.raises(ShapeMismatch):
        gabor_branch(Tensor(np.zeros((2, 4, 4))), bank)


# ---------------------------------------------------------------- fusion and block

def test_zero_gabor_map_leaves_msa(rng):
    params, bank = MsaParams(4, rng), GaborBank(4, rng)
    bank.out_w.data[:] = 0.0
    x = Tensor(rng.normal(size=(4, 4, 4)))
    assert np.abs(gmsa_forward(x, params, bank).data - spectral_msa(x, params).data).max() < 1e-15


def test_fusion_is_sum_of_branches(rng):
    params, bank = MsaParams(4, rng), GaborBank(4, rng)
    x = Tensor(rng.normal(size=(4, 4, 4)))
    _, _, v2 = qkv(x, params)
    fry = gabor_branch(ops.reshape(v2, x.shape), bank, freqs=bank.frequencies(x))
    diff = gmsa_forward(x, params, bank).data - spectral_msa(x, params).data
    assert np.abs(diff - fry.data).max() < 1e-12


def test_gmsa_grad_check(rng):
    params, bank = MsaParams(4, rng), GaborBank(4, rng, ksize=3)
    x = Tensor(rng.normal(size=(4, 4, 4)))
    wts = rng.normal(size=(4, 4, 4))
    rep = grad_check(lambda t: ops.sum(ops.mul(gmsa_forward(t, params, bank), wts)), x)
    assert rep.passed, rep.line()


def test_zero_block_is_identity(rng):
    blk = NukMsaBlock(4, rng, ksize=3)
    for p in blk.parameters().values():
        p.data[:] = 0.0
    x = Tensor(rng.normal(size=(4, 4, 4)))
    assert np.abs(nuk_msa_block(blk, x).data - x.data).max() < 1e-12


def test_block_shape_and_grad(rng):
    blk = NukMsaBlock(4, rng, ksize=3, n_interior=4)
    x = Tensor(rng.normal(size=(4, 4, 4)))
    assert nuk_msa_block(blk, x).shape == (4, 4, 4)
    wts = rng.normal(size=(4, 4, 4))
    rep = grad_check(lambda t: ops.sum(ops.mul(nuk_msa_block(blk, t), wts)), x)
    assert rep.passed, rep.line()
    with pytest.raises(ShapeMismatch):
        nuk_msa_block(blk, Tensor(np.zeros((3, 4, 4))))
