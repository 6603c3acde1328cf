"""Reverse-mode differentiation, gradient checking and optimisation."""
from . import ops
from .check import REGISTRY, GradCheckReport, grad_check, register, run_case
from .module import Module, init_normal, ones, param, zeros
from .optim import AdamState, adam_step, cosine_lr
from .tensor import Function, Tape, Tensor, active_tape, as_tensor

__all__ = [
    "ops", "REGISTRY", "GradCheckReport", "grad_check", "register", "run_case",
    "Module", "init_normal", "ones", "param", "zeros",
    "AdamState", "adam_step", "cosine_lr",
    "Function", "Tape", "Tensor", "active_tape", "as_tensor",
]
