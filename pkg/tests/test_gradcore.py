import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

import unhig.gradchecks  # noqa: F401  (fills the registry)
from unhig.errors import NonScalarOutput, ShapeMismatch
from unhig.gradcore import (
    REGISTRY,
    AdamState,
    Function,
    Tape,
    Tensor,
    adam_step,
    cosine_lr,
    grad_check,
    ops,
    run_case,
)
from unhig.gradcore.check import CheckCase
from unhig.gradchecks import primitive_coverage

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def test_softmax_sums_to_one(rng):
    s = ops.softmax(Tensor(rng.normal(size=7)))
    assert abs(s.data.sum() - 1.0) < 1e-12


def test_matmul_identity(rng):
    a = rng.normal(size=(4, 3))
    assert np.array_equal(ops.matmul(Tensor(np.eye(4)), Tensor(a)).data, a)


def test_shape_mismatch_raised():
    with pytest.raises(ShapeMismatch):
        ops.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
    with pytest.raises(ShapeMismatch):
        ops.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4,))))


PRIMITIVES = sorted(n for n in REGISTRY if n.startswith("op:"))


@pytest.mark.parametrize("name", PRIMITIVES)
def test_primitive_vjp_matches_fd(name):
    rep = run_case(REGISTRY[name])
    assert rep.max_rel_error < 1e-6, rep.line()


def test_every_primitive_is_registered():
    names, missing = primitive_coverage()
    assert not missing
    assert len(names) == len(PRIMITIVES)


def test_grad_check_sum_of_squares():
    x = leaf([1.0, 2.0])
    with Tape() as tape:
        out = ops.sum(ops.mul(x, x))
    tape.backward(out)
    assert np.allclose(x.grad, [2.0, 4.0])
    rep = grad_check(lambda t: ops.sum(ops.mul(t, t)), Tensor(np.array([1.0, 2.0])))
    assert rep.max_abs_error < 1e-8 and rep.passed


def test_grad_check_constant_function():
    rep = grad_check(lambda t: Tensor(np.array(3.0)), Tensor(np.array([1.0, 2.0])))
    assert rep.passed and rep.max_abs_error == 0.0


def test_grad_check_flags_discontinuity():
    # clip at 0.5 with the point sitting on the kink: FD sees half the slope
    x = Tensor(np.array([0.5]))
    rep = grad_check(lambda t: ops.sum(ops.clip(t, 0.5, 2.0)), x)
    assert not rep.passed


def test_grad_check_rejects_non_scalar():
    with pytest.raises(NonScalarOutput):
        grad_check(lambda t: ops.mul(t, 2.0), Tensor(np.ones(3)))


class _BrokenSquare(Function):
    name = "broken_square"

    @staticmethod
    def forward(ctx, x):
        ctx.x = x
        return x * x

    @staticmethod
    def backward(ctx, g):
        return g * 3.0 * ctx.x  # should be 2x


def test_corrupted_backward_reported_by_name():
    case = CheckCase("op:broken_square", "primitive",
                     lambda rng: (lambda t: ops.sum(_BrokenSquare.apply(t)), [Tensor(rng.normal(size=4))]))
    rep = run_case(case)
    assert not rep.passed
    assert "op:broken_square" in rep.line() and rep.line().startswith("FAIL")


def test_crashing_backward_is_a_failure():
    def build(rng):
        def f(t):
            raise RuntimeError("boom")
        return f, [Tensor(np.ones(2))]
    rep = run_case(CheckCase("op:crash", "primitive", build))
    assert not rep.passed and "boom" in rep.error


def test_backward_is_linear(rng):
    a = rng.normal(size=(3, 4))

    def grad_of(fn):
        x = leaf(a)
        with Tape() as tape:
            out = fn(x)
        tape.backward(out)
        return x.grad

    f1 = lambda x: ops.sum(ops.exp(x))  # noqa: E731
    f2 = lambda x: ops.sum(ops.mul(ops.sigmoid(x), x))  # noqa: E731
    both = grad_of(lambda x: ops.add(f1(x), f2(x)))
    assert np.abs(both - grad_of(f1) - grad_of(f2)).max() < 1e-12


@given(arrays(np.float64, (3, 4), elements=finite))
def test_forward_is_pure(a):
    f = lambda: ops.softmax(ops.matmul(Tensor(a), Tensor(a.T))).data  # noqa: E731
    assert np.array_equal(f(), f())


def test_tape_is_single_use():
    x = leaf([1.0])
    with Tape() as tape:
        out = ops.sum(ops.mul(x, x))
    tape.backward(out)
    with pytest.raises(RuntimeError):
        tape.backward(out)


def test_no_tape_no_record():
    x = leaf([1.0, 2.0])
    y = ops.mul(x, x)
    assert not y.requires_grad


@given(arrays(np.float64, (2, 3), elements=finite), arrays(np.float64, (3, 2), elements=finite))
def test_matmul_grad_property(a, b):
    ta, tb = leaf(a), leaf(b)
    with Tape() as tape:
        out = ops.sum(ops.matmul(ta, tb))
    tape.backward(out)
    assert np.allclose(ta.grad, np.ones((2, 2)) @ b.T)
    assert np.allclose(tb.grad, a.T @ np.ones((2, 2)))


# ---------------------------------------------------------------- optimiser

def test_adam_zero_gradient_keeps_params():
    p = {"w": Tensor(np.array([1.0, -2.0]))}
    st_ = AdamState(horizon=10)
    adam_step(p, {"w": np.zeros(2)}, st_)
    assert np.array_equal(p["w"].data, [1.0, -2.0])
    assert st_.step == 1


def test_adam_constant_gradient_moves_against_sign():
    p = {"w": Tensor(np.array([0.0, 0.0]))}
    st_ = AdamState(horizon=0, lr_init=1e-2)
    g = np.array([3.0, -0.5])
    deltas = []
    for _ in range(200):
        before = p["w"].data.copy()
        adam_step(p, {"w": g}, st_)
        deltas.append(p["w"].data - before)
    # bias-corrected Adam with constant g steps by -lr * sign(g)
    assert np.allclose(deltas[-1], -1e-2 * np.sign(g), rtol=1e-6)


def test_adam_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        adam_step({"w": Tensor(np.zeros(2))}, {"w": np.zeros(3)}, AdamState(horizon=5))


def test_cosine_schedule_endpoints():
    assert cosine_lr(0, 2e-4, 100) == pytest.approx(2e-4)
    assert abs(cosine_lr(100, 2e-4, 100)) < 1e-12
    assert cosine_lr(50, 2e-4, 100) == pytest.approx(1e-4)
    assert AdamState(horizon=100).beta1 == 0.9 and AdamState(horizon=100).beta2 == 0.999


@given(st.integers(0, 200), st.integers(1, 200))
def test_cosine_monotone(t, horizon):
    assert cosine_lr(t, 1.0, horizon) >= cosine_lr(t + 1, 1.0, horizon) - 1e-15
    assert 0.0 <= cosine_lr(t, 1.0, horizon) <= 1.0 + 1e-15
    assert math.isfinite(cosine_lr(t, 1.0, horizon))
