"""Tensors and the reverse-mode tape.

A :class:`Function` subclass supplies ``forward`` on raw arrays and a
``backward`` rule mapping the output cotangent to input cotangents.  Calls made
while a :class:`Tape` is active are recorded in execution order; outside a tape
the same calls just compute values.
"""
from __future__ import annotations

import threading
from types import SimpleNamespace

import numpy as np

from ..errors import NonScalarOutput, ShapeMismatch

_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def active_tape() -> "Tape | None":
    s = _stack()
    return s[-1] if s else None


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind in "biu":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise NonScalarOutput(f"tensor of shape {self.shape} is not a scalar")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # arithmetic sugar; the ops live in ops.py
    def __add__(self, o):
        from . import ops
        return ops.add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        from . import ops
        return ops.sub(self, o)

    def __rsub__(self, o):
        from . import ops
        return ops.sub(o, self)

    def __mul__(self, o):
        from . import ops
        return ops.mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        from . import ops
        return ops.div(self, o)

    def __rtruediv__(self, o):
        from . import ops
        return ops.div(o, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __pow__(self, p):
        from . import ops
        return ops.power(self, p)

    def __matmul__(self, o):
        from . import ops
        return ops.matmul(self, o)

    def __getitem__(self, idx):
        from . import ops
        return ops.getitem(self, idx)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        return ops.transpose(self, axes or None)

    @property
    def T(self):
        return self.transpose()

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class OpRecord:
    __slots__ = ("name", "fn", "ctx", "inputs", "output")

    def __init__(self, name, fn, ctx, inputs, output):
        self.name = name
        self.fn = fn
        self.ctx = ctx
        self.inputs = inputs
        self.output = output


class Tape:
    """Ordered record of differentiable ops for one forward/backward pass."""

    def __init__(self):
        self.records: list[OpRecord] = []
        self._used = False

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        s = _stack()
        if s and s[-1] is self:
            s.pop()
        return False

    def __len__(self):
        return len(self.records)

    def backward(self, loss: Tensor, accumulate: bool = True) -> dict[int, np.ndarray]:
        """Propagate ``d loss`` back through the record.

        Leaf tensors with ``requires_grad`` receive their gradient in ``.grad``
        (summed into any existing value when ``accumulate``).  Returns the
        cotangent map keyed by ``id(tensor)``.
        """
        if self._used:
            raise RuntimeError("tape already consumed by a backward pass")
        if loss.size != 1:
            raise NonScalarOutput(f"backward needs a scalar loss, got shape {loss.shape}")
        self._used = True
        cot: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        produced = set()
        for rec in reversed(self.records):
            produced.add(id(rec.output))
            g = cot.pop(id(rec.output), None)
            if g is None:
                continue
            grads = rec.fn.backward(rec.ctx, g)
            if not isinstance(grads, tuple):
                grads = (grads,)
            for inp, gi in zip(rec.inputs, grads):
                if gi is None or not inp.requires_grad:
                    continue
                if gi.shape != inp.shape:
                    raise ShapeMismatch(
                        f"{rec.name}: backward produced {gi.shape} for input {inp.shape}")
                k = id(inp)
                cot[k] = cot[k] + gi if k in cot else gi
            # keep leaves' cotangents, drop intermediate storage
        leaves = {}
        for rec in self.records:
            for inp in rec.inputs:
                if inp.requires_grad and id(inp) in cot and id(inp) not in produced:
                    leaves[id(inp)] = inp
        if id(loss) in cot and loss.requires_grad and id(loss) not in produced:
            leaves[id(loss)] = loss
        for k, t in leaves.items():
            g = cot[k]
            t.grad = t.grad + g if (accumulate and t.grad is not None) else g.copy()
        return cot


class Function:
    """Base for differentiable primitives.

    Subclasses implement ``forward(ctx, *arrays, **params)`` and
    ``backward(ctx, g)`` returning one cotangent (or ``None``) per input.
    """

    name = "function"

    @staticmethod
    def forward(ctx, *xs, **params):
        raise NotImplementedError

    @staticmethod
    def backward(ctx, g):
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs, **params) -> Tensor:
        tensors = tuple(as_tensor(x) for x in inputs)
        ctx = SimpleNamespace()
        out = Tensor(cls.forward(ctx, *(t.data for t in tensors), **params))
        tape = active_tape()
        if tape is not None and any(t.requires_grad for t in tensors):
            out.requires_grad = True
            tape.records.append(OpRecord(cls.name, cls, ctx, tensors, out))
        return out


def backward(loss: Tensor) -> None:
    """Convenience: run backward on the innermost active tape."""
    tape = active_tape()
    if tape is None:
        raise RuntimeError("no active tape")
    tape.backward(loss)
