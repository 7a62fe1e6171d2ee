"""Central finite-difference check of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import UsageError
from .tensor import Tape, Tensor, backward


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    per_input: list

    @property
    def pass_(self) -> bool:
        return self.passed


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> np.ndarray:
    # below |g| ~ floor the comparison degrades to absolute error; keeps
    # double-precision roundoff (~1e-10) on near-zero entries from failing
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def _scalar(out: Tensor) -> float:
    if out.size != 1:
        raise UsageError(f"grad_check needs a scalar-valued function, got shape {out.shape}")
    return float(out.data.reshape(()))


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], step: float = 1e-6,
               tol: float = 1e-4, grad_hook=None, max_elems: int | None = None,
               seed: int = 0) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar ``f(*inputs)`` against
    ``(f(x+h) - f(x-h)) / 2h`` elementwise, all in float64.

    Inputs are promoted to float64 in place for the duration of the check.
    ``grad_hook`` may rewrite the analytic gradients before comparison (used
    for negative controls). ``max_elems`` limits the finite-difference probe
    to a seeded random subset of each input's elements.
    """
    rng = np.random.default_rng(seed)
    inputs = list(inputs)
    saved = [(t.data, t.grad) for t in inputs]
    try:
        for t in inputs:
            t.data = np.array(t.data, dtype=np.float64)
            t.grad = None
        with Tape() as tape:
            out = f(*inputs)
        _scalar(out)
        if len(tape):
            backward(tape, np.ones(out.shape), output=out)
        analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
        if grad_hook is not None:
            analytic = grad_hook(analytic)

        max_err, per_input = 0.0, []
        for t, ga in zip(inputs, analytic):
            if not t.requires_grad:
                per_input.append(0.0)
                continue
            flat = t.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_elems is not None and flat.size > max_elems:
                idx = np.sort(rng.choice(flat.size, size=max_elems, replace=False))
            numeric = np.empty(idx.size)
            for j, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + step
                fp = _scalar(f(*inputs))
                flat[i] = orig - step
                fm = _scalar(f(*inputs))
                flat[i] = orig
                numeric[j] = (fp - fm) / (2 * step)
            err = float(relative_error(ga.reshape(-1)[idx], numeric).max()) if idx.size else 0.0
            per_input.append(err)
            max_err = max(max_err, err)
        return GradCheckReport(max_err, max_err <= tol, per_input)
    finally:
        for t, (data, grad) in zip(inputs, saved):
            t.data, t.grad = data, grad
