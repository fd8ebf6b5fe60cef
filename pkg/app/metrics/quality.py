"""
Pixel-wise quality measures: MSE, PSNR, and threshold porosity.
"""

import logging
import math
from typing import Iterable

import numpy as np

from app.core.errors import InvalidRangeError
from app.imaging.image import Image, check_same_shape

# Pixels darker than this are pore space. Shared by the rock generator
# and every porosity measurement.
PORE_THRESHOLD = 0.05

logger = logging.getLogger(__name__)

# Serialized form of the identical-images PSNR sentinel
PSNR_INF_TOKEN = "inf"


def mse(a: Image, b: Image) -> float:
    """Mean squared difference, accumulated in float64."""
    check_same_shape(a, b)
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    return float(np.mean(diff * diff))


def psnr(a: Image, b: Image, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE) in dB; identical images give +inf."""
    if peak <= 0:
        raise InvalidRangeError(f"PSNR peak must be positive, got {peak}")
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


def porosity_fraction(data: np.ndarray, threshold: float = PORE_THRESHOLD) -> float:
    return float(np.count_nonzero(data < threshold)) / data.size


def porosity(img: Image, threshold: float = PORE_THRESHOLD) -> float:
    """Fraction of pixels segmented as pore space."""
    return porosity_fraction(img.data, threshold)


def format_metric(value: float) -> str:
    """CSV form of a metric value; infinities become the 'inf' token."""
    if math.isinf(value):
        return PSNR_INF_TOKEN if value > 0 else f"-{PSNR_INF_TOKEN}"
    return f"{value:.6f}"


def finite_mean(values: Iterable[float], what: str = "values") -> float:
    """
    Mean over the finite values; inf when none are finite.

    Identical images have PSNR +inf; they are left out of the denominator
    and the count left out is logged.
    """
    values = list(values)
    finite = [v for v in values if math.isfinite(v)]
    excluded = len(values) - len(finite)
    if excluded:
        logger.info(f"{excluded} of {len(values)} {what} are not finite; mean over the remaining {len(finite)}")
    return float(np.mean(finite)) if finite else math.inf
