"""Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import MissingGradient
from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")


def adam_step(params: Sequence[Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``.

    Arithmetic runs in float64; parameters are stored back as float32.
    """
    for i, p in enumerate(params):
        if p.grad is None:
            raise MissingGradient(f"parameter {p.name or i} has no gradient")
    if not state.m:
        state.m = [np.zeros(p.shape, dtype=np.float64) for p in params]
        state.v = [np.zeros(p.shape, dtype=np.float64) for p in params]
    if len(state.m) != len(params):
        raise ValueError("optimizer state does not match the parameter list")

    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad.astype(np.float64)
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        update = state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
        p.data = (p.data.astype(np.float64) - update).astype(np.float32)
