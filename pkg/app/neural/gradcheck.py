"""Central finite differences for gradient checks."""

from typing import Callable

import numpy as np

PERTURBATION = 1e-5


def numerical_gradient(f: Callable[[], float], arr: np.ndarray, h: float = PERTURBATION) -> np.ndarray:
    """d f / d arr by central differences, perturbing arr in place."""
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        f_plus = f()
        flat[i] = saved - h
        f_minus = f()
        flat[i] = saved
        out[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(|a|, |n|, tiny), over the whole array."""
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), 1e-12)
    return float(np.max(np.abs(analytic - numeric))) / scale
