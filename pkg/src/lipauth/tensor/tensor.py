"""Dense tensors, trainable parameters and the operation tape."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import DimensionError, UsageError


class Tensor:
    """A dense row-major array with an optional gradient.

    ``data`` is a numpy array; ``grad`` (when present) has the same shape.
    """

    __slots__ = ("data", "requires_grad", "grad", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind not in "fc":
            arr = arr.astype(np.float32 if dtype is None else dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # operator sugar; the implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)


class Parameter(Tensor):
    """A named trainable tensor (``requires_grad`` is always true)."""

    __slots__ = ("name",)

    def __init__(self, name: str, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


@dataclass
class Op:
    name: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


class Tape:
    """Ordered record of executed differentiable operations.

    Use as a context manager; operations executed inside the block whose
    inputs require gradients are appended in execution order.
    """

    def __init__(self):
        self.ops: list[Op] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().remove(self)
        return False

    def __len__(self):
        return len(self.ops)

    def clear(self):
        self.ops.clear()


def active_tape() -> Optional[Tape]:
    stack = _stack()
    return stack[-1] if stack else None


def record(name: str, inputs: Sequence[Tensor], out_data: np.ndarray, backward) -> Tensor:
    """Wrap ``out_data`` in a tensor and log it on the active tape if needed."""
    needs = any(t.requires_grad for t in inputs)
    tape = active_tape()
    out = Tensor(out_data, requires_grad=needs and tape is not None)
    if out.requires_grad:
        tape.ops.append(Op(name, tuple(inputs), out, backward))
    return out


def backward(tape: Tape, seed, output: Optional[Tensor] = None) -> None:
    """Propagate ``seed`` (dL/d output) back through ``tape``.

    ``output`` defaults to the result of the last recorded operation.
    Gradients are accumulated into ``.grad`` of every leaf tensor that
    requires gradients and is reachable from ``output``.
    """
    if not tape.ops:
        raise UsageError("backward on an empty tape")
    if output is None:
        output = tape.ops[-1].output
    seed = np.asarray(seed.data if isinstance(seed, Tensor) else seed, dtype=output.dtype)
    if seed.shape != output.shape:
        raise DimensionError(f"seed shape {seed.shape} != output shape {output.shape}")

    produced = {id(op.output) for op in tape.ops}
    pending: dict[int, np.ndarray] = {id(output): seed.copy()}
    leaves: dict[int, Tensor] = {}
    for op in reversed(tape.ops):
        g = pending.pop(id(op.output), None)
        if g is None:
            continue
        in_grads = op.backward(g)
        for t, gi in zip(op.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in pending:
                pending[key] = pending[key] + gi
            else:
                pending[key] = gi
            if key not in produced:
                leaves[key] = t
    if id(output) not in produced and output.requires_grad:
        leaves[id(output)] = output
    for key, t in leaves.items():
        g = pending.get(key)
        if g is None:
            continue
        g = np.asarray(g, dtype=t.dtype).reshape(t.shape)
        t.grad = g.copy() if t.grad is None else t.grad + g
