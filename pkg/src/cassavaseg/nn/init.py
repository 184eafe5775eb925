"""Weight initialization."""

import math

import numpy as np

from .tensor import Tensor


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def xavier_init(shape, fan_in: int, fan_out: int, seed, name: str | None = None) -> Tensor:
    """Glorot/Xavier uniform samples in [-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError("fan_in and fan_out must be >= 1")
    bound = xavier_bound(fan_in, fan_out)
    rng = np.random.default_rng(seed)
    data = rng.uniform(-bound, bound, size=tuple(shape)).astype(np.float32)
    # float32 rounding may nudge a sample past the bound
    np.clip(data, np.float32(-bound), np.float32(bound), out=data)
    return Tensor(data, requires_grad=True, name=name)
