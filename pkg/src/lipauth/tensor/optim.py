"""SGD and Adam parameter updates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import UsageError
from .tensor import Parameter


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise UsageError(f"unknown optimizer kind {self.kind!r}")
        self.betas = tuple(self.betas)


@dataclass
class Optimizer:
    """Holds per-parameter state (Adam moments) across steps."""

    config: OptimizerConfig
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: Sequence[Parameter]) -> None:
        for p in params:
            if p.grad is None:
                raise UsageError(f"parameter {p.name!r} has no gradient")
        self.step_count += 1
        cfg = self.config
        if cfg.kind == "sgd":
            for p in params:
                p.data = (p.data - cfg.lr * p.grad).astype(p.dtype, copy=False)
            return
        b1, b2 = cfg.betas
        t = self.step_count
        c1, c2 = 1 - b1 ** t, 1 - b2 ** t
        for p in params:
            g = p.grad
            m = self.m.get(p.name)
            v = self.v.get(p.name)
            m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
            v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
            self.m[p.name], self.v[p.name] = m, v
            update = cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
            p.data = (p.data - update).astype(p.dtype, copy=False)

    @staticmethod
    def zero_grad(params: Sequence[Parameter]) -> None:
        for p in params:
            p.grad = None


def optimizer_step(params: Sequence[Parameter], config: OptimizerConfig,
                   optimizer: Optimizer | None = None) -> Optimizer:
    """Apply one update; pass the returned optimizer back in to persist Adam moments."""
    opt = optimizer if optimizer is not None else Optimizer(config)
    opt.step(params)
    return opt
