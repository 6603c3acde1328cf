"""Adam with bias correction and a cosine learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatch


def cosine_lr(t: int, lr_init: float, horizon: int) -> float:
    """``lr_init * 0.5 * (1 + cos(pi * t / horizon))``, held at 0 past the horizon."""
    if horizon <= 0:
        return lr_init
    t = min(t, horizon)
    return lr_init * 0.5 * (1.0 + math.cos(math.pi * t / horizon))


@dataclass
class AdamState:
    horizon: int
    lr_init: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def lr(self) -> float:
        return cosine_lr(self.step, self.lr_init, self.horizon)


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """Update ``params`` (name -> Tensor) in place from ``grads`` (name -> array).

    Missing gradients count as zero.  The learning rate is evaluated at the
    current step before it is incremented.
    """
    lr = state.lr()
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.data.shape:
            raise ShapeMismatch(f"{name}: grad {g.shape} vs param {p.data.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.data.dtype)
    state.step = t
