"""
Training losses with analytic gradients.

Both take prediction and target batches of shape (N, 1, H, W) and return
(loss, d loss / d prediction). The loss is a mean over every pixel of the
batch, so the batch gradient is the mean of the per-image gradients.
"""

from enum import Enum
from typing import Tuple

import numpy as np

from app.core.errors import ShapeMismatchError
from app.metrics.ssim import SsimParams, ssim_and_gradient


class LossKind(str, Enum):
    MSE = "mse"
    SSIM = "ssim"


def _check(pred: np.ndarray, target: np.ndarray) -> None:
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"prediction {pred.shape} and target {target.shape} differ")


def mse_loss(pred: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """(1/N) sum (pred - target)^2 and its gradient 2 (pred - target) / N."""
    _check(pred, target)
    diff = pred.astype(np.float64) - target.astype(np.float64)
    loss = float(np.mean(diff * diff))
    grad = 2.0 * diff / diff.size
    return loss, grad.astype(pred.dtype)


def ssim_loss(pred: np.ndarray, target: np.ndarray,
              params: SsimParams = SsimParams()) -> Tuple[float, np.ndarray]:
    """(1/N) sum 1 - SSIM(p) over single-channel images, gradient through the window statistics."""
    _check(pred, target)
    if pred.ndim == 4 and pred.shape[1] != 1:
        raise ShapeMismatchError(f"SSIM loss needs single-channel images, got {pred.shape[1]} channels")
    smap, grad = ssim_and_gradient(pred, target, params)
    loss = float(1.0 - np.mean(smap))
    return loss, (-grad / smap.size).astype(pred.dtype)


def compute_loss(kind: LossKind, pred: np.ndarray, target: np.ndarray,
                 params: SsimParams = SsimParams()) -> Tuple[float, np.ndarray]:
    if LossKind(kind) == LossKind.SSIM:
        return ssim_loss(pred, target, params)
    return mse_loss(pred, target)
