"""Central finite-difference gradient checking and the check registry."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import NonScalarOutput
from .tensor import Tape, Tensor


@dataclass
class GradCheckReport:
    name: str
    max_rel_error: float
    max_abs_error: float
    n_coords: int
    tol: float
    error: str = ""
    rel_errors: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < self.tol)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        if self.error:
            return f"{status}  {self.name:<28s} error: {self.error}"
        return (f"{status}  {self.name:<28s} max_rel={self.max_rel_error:.3e}  "
                f"coords={self.n_coords}  tol={self.tol:g}")


def _scalar(out: Tensor) -> float:
    if out.size != 1:
        raise NonScalarOutput(f"grad_check needs a scalar function, got shape {out.shape}")
    return float(out.data.reshape(-1)[0])


def grad_check(f: Callable, x, h: float = 1e-5, tol: float = 1e-4, floor: float = 1e-6,
               max_coords: int | None = None, seed: int = 0, name: str = "f") -> GradCheckReport:
    """Compare tape gradients of scalar ``f(*inputs)`` with central differences.

    ``x`` is a tensor or a list of tensors (all are perturbed).  Relative error
    per coordinate is ``|a - n| / max(|a|, |n|, floor)``.  With ``max_coords``
    only that many randomly chosen coordinates per input are differenced.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    saved = [t.requires_grad for t in xs]
    for t in xs:
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.grad = None
    try:
        with Tape() as tape:
            out = f(*xs)
        _scalar(out)
        tape.backward(out)
        analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in xs]
    finally:
        for t, r in zip(xs, saved):
            t.requires_grad = r
            t.grad = None

    rng = np.random.default_rng(seed)
    rel_all, max_rel, max_abs, count = [], 0.0, 0.0, 0
    for t, ga in zip(xs, analytic):
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        rel = np.empty(coords.size)
        gaf = ga.reshape(-1)
        for j, i in enumerate(coords):
            orig = flat[i]
            flat[i] = orig + h
            fp = _scalar(f(*xs))
            flat[i] = orig - h
            fm = _scalar(f(*xs))
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            err = abs(gaf[i] - num)
            rel[j] = err / max(abs(gaf[i]), abs(num), floor)
            max_abs = max(max_abs, err)
        rel_all.append(rel)
        if rel.size:
            max_rel = max(max_rel, float(np.nan_to_num(rel, nan=np.inf).max()))
        count += coords.size
    return GradCheckReport(name, max_rel, max_abs, count, tol, rel_errors=rel_all)


@dataclass
class CheckCase:
    name: str
    kind: str  # "primitive" | "layer" | "loss"
    build: Callable  # rng -> (f, inputs)
    tol: float = 1e-4
    max_coords: int | None = None


REGISTRY: dict[str, CheckCase] = {}


def register(name: str, kind: str, tol: float = 1e-4, max_coords: int | None = None):
    def deco(build):
        REGISTRY[name] = CheckCase(name, kind, build, tol, max_coords)
        return build
    return deco


def run_case(case: CheckCase, seed: int = 0) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    f, inputs = case.build(rng)
    try:
        return grad_check(f, inputs, tol=case.tol, max_coords=case.max_coords, seed=seed, name=case.name)
    except Exception as exc:  # a crashing backward is a failed check, reported by name
        return GradCheckReport(case.name, float("inf"), float("inf"), 0, case.tol, error=repr(exc))
