"""
Structural similarity.

Local means, variances and covariance come from a separable window
applied with symmetric boundary padding, so the SSIM map has the input's
full size. Along one axis of length n, padding plus valid correlation is a
fixed n x n matrix; filtering is M_h @ x @ M_w.T and its exact adjoint is
M_h.T @ g @ M_w, which is what the SSIM-loss gradient needs.
"""

import logging
from enum import Enum
from functools import lru_cache
from typing import Any, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.imaging.image import Image, check_same_shape

logger = logging.getLogger(__name__)

DEFAULT_WINDOW_SIZE = 11
DEFAULT_SIGMA = 1.5
K1 = 0.01
K2 = 0.03


class WindowKind(str, Enum):
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"


class SsimParams(BaseModel):
    """Window and stabilizing constants; c1/c2 default to (0.01 L)^2 and (0.03 L)^2."""
    model_config = ConfigDict(frozen=True)

    window: WindowKind = WindowKind.GAUSSIAN
    size: int = Field(default=DEFAULT_WINDOW_SIZE, ge=1)
    sigma: float = Field(default=DEFAULT_SIGMA, gt=0.0)
    dynamic_range: float = Field(default=1.0, gt=0.0)
    c1: float = Field(default=(K1 ** 2), gt=0.0)
    c2: float = Field(default=(K2 ** 2), gt=0.0)

    @field_validator("size")
    @classmethod
    def check_odd(cls, v: int) -> int:
        if v % 2 == 0:
            raise ValueError(f"SSIM window size must be odd, got {v}")
        return v

    @model_validator(mode="before")
    @classmethod
    def fill_constants(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        dyn = float(data.get("dynamic_range") or 1.0)
        if data.get("c1") is None:
            data["c1"] = (K1 * dyn) ** 2
        if data.get("c2") is None:
            data["c2"] = (K2 * dyn) ** 2
        return data

    def kernel(self) -> np.ndarray:
        return window_kernel(self.window, self.size, self.sigma)


def window_kernel(kind: WindowKind, size: int, sigma: float = DEFAULT_SIGMA) -> np.ndarray:
    """Normalized 1-D window; the 2-D window is its outer product."""
    if kind == WindowKind.UNIFORM:
        return np.full(size, 1.0 / size)
    t = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return w / w.sum()


@lru_cache(maxsize=32)
def filter_matrix(n: int, kind: WindowKind, size: int, sigma: float) -> np.ndarray:
    """Symmetric padding followed by valid correlation, as an n x n matrix."""
    w = window_kernel(kind, size, sigma)
    pad = size // 2
    source = np.pad(np.arange(n), pad, mode="symmetric")
    rows = np.repeat(np.arange(n), size)
    cols = source[np.arange(n)[:, None] + np.arange(size)[None, :]].ravel()
    mat = np.zeros((n, n), dtype=np.float64)
    np.add.at(mat, (rows, cols), np.tile(w, n))
    mat.setflags(write=False)
    return mat


def _matrices(shape: Tuple[int, int], params: SsimParams) -> Tuple[np.ndarray, np.ndarray]:
    h, w = shape[-2], shape[-1]
    key = (params.window, params.size, params.sigma)
    return filter_matrix(h, *key), filter_matrix(w, *key)


def local_filter(x: np.ndarray, params: SsimParams) -> np.ndarray:
    """Window-weighted local mean over the last two axes."""
    mh, mw = _matrices(x.shape, params)
    return mh @ x @ mw.T


def local_filter_adjoint(g: np.ndarray, params: SsimParams) -> np.ndarray:
    mh, mw = _matrices(g.shape, params)
    return mh.T @ g @ mw


def _statistics(x: np.ndarray, y: np.ndarray, params: SsimParams):
    mu_x = local_filter(x, params)
    mu_y = local_filter(y, params)
    var_x = local_filter(x * x, params) - mu_x * mu_x
    var_y = local_filter(y * y, params) - mu_y * mu_y
    cov = local_filter(x * y, params) - mu_x * mu_y
    a1 = 2.0 * mu_x * mu_y + params.c1
    a2 = 2.0 * cov + params.c2
    b1 = mu_x * mu_x + mu_y * mu_y + params.c1
    b2 = var_x + var_y + params.c2
    return mu_x, mu_y, a1, a2, b1, b2


def ssim_array(x: np.ndarray, y: np.ndarray, params: SsimParams) -> np.ndarray:
    """Per-pixel SSIM over the last two axes, float64."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _, _, a1, a2, b1, b2 = _statistics(x, y, params)
    return (a1 * a2) / (b1 * b2)


def ssim_and_gradient(x: np.ndarray, y: np.ndarray, params: SsimParams) -> Tuple[np.ndarray, np.ndarray]:
    """
    SSIM map of x against y and the gradient of sum(map) with respect to x.

    Works on any leading batch axes; the last two are image axes.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mu_x, mu_y, a1, a2, b1, b2 = _statistics(x, y, params)
    denom = b1 * b2
    s = (a1 * a2) / denom
    d_mean = 2.0 * mu_y * a2 / denom - 2.0 * mu_x * s / b1 + 2.0 * mu_x * s / b2 - 2.0 * mu_y * a1 / denom
    d_square = -s / b2
    d_cross = 2.0 * a1 / denom
    grad = (local_filter_adjoint(d_mean, params)
            + 2.0 * x * local_filter_adjoint(d_square, params)
            + y * local_filter_adjoint(d_cross, params))
    return s, grad


def ssim_map(t: Image, r: Image, params: SsimParams = SsimParams()) -> np.ndarray:
    """SSIM(p) for every pixel, same size as the inputs."""
    check_same_shape(t, r)
    return ssim_array(t.data, r.data, params)


def mssim(t: Image, r: Image, params: SsimParams = SsimParams()) -> float:
    """Mean of the SSIM map."""
    return float(np.mean(ssim_map(t, r, params)))
