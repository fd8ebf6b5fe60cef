"""Adam updates over a network's parameters."""

from typing import Iterable

import numpy as np

from app.core.errors import InvalidRangeError
from app.neural.layers import Param

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


def adam_step(params: Iterable[Param], t: int, learning_rate: float,
              beta1: float = BETA1, beta2: float = BETA2, eps: float = EPSILON) -> None:
    """One bias-corrected Adam update at step t (1-based), in place."""
    if t < 1:
        raise InvalidRangeError(f"Adam step index starts at 1, got {t}")
    corr1 = 1.0 - beta1 ** t
    corr2 = 1.0 - beta2 ** t
    for p in params:
        g = p.grad
        p.m[...] = beta1 * p.m + (1.0 - beta1) * g
        p.v[...] = beta2 * p.v + (1.0 - beta2) * g * g
        m_hat = p.m / corr1
        v_hat = p.v / corr2
        p.value -= (learning_rate * m_hat / (np.sqrt(v_hat) + eps)).astype(p.value.dtype)
