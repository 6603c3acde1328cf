"""Parameter containers."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


class Module:
    """Walks attributes in definition order to find parameters and submodules."""

    def named_parameters(self, prefix: str = ""):
        for key, val in vars(self).items():
            yield from _walk(val, f"{prefix}{key}")

    def parameters(self) -> dict:
        return dict(self.named_parameters())

    def num_params(self) -> int:
        return int(sum(p.size for _, p in self.named_parameters()))

    def zero_grad(self):
        for _, p in self.named_parameters():
            p.grad = None


def _walk(val, name):
    if isinstance(val, Tensor):
        if val.requires_grad:
            yield name, val
    elif isinstance(val, Module):
        yield from val.named_parameters(name + ".")
    elif isinstance(val, (list, tuple)):
        for i, item in enumerate(val):
            yield from _walk(item, f"{name}.{i}")


def param(data, dtype=np.float64) -> Tensor:
    return Tensor(np.array(data, dtype=dtype), requires_grad=True)


def init_normal(rng: np.random.Generator, shape, fan_in: int, gain: float = 1.0, dtype=np.float64) -> Tensor:
    return param(rng.normal(0.0, gain / np.sqrt(max(fan_in, 1)), size=shape), dtype)


def zeros(shape, dtype=np.float64) -> Tensor:
    return param(np.zeros(shape), dtype)


def ones(shape, dtype=np.float64) -> Tensor:
    return param(np.ones(shape), dtype)
