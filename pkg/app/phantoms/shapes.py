"""
Anti-aliased primitives shared by the phantom generators.

Pixel (r, c) has center coordinates x = c - (N-1)/2, y = r - (N-1)/2,
the same frame the projector uses, so a disk centered at (0, 0) sits on
the rotation axis.
"""

from typing import Tuple

import numpy as np

from app.core.errors import InvalidRangeError
from app.imaging.image import IMAGE_DTYPE, Image


def disk_coverage(shape: Tuple[int, int], cy: float, cx: float, radius: float) -> Tuple[slice, slice, np.ndarray]:
    """
    Fractional coverage of a disk over the pixels of its bounding box.

    Coverage is the linear edge ramp clip(radius - d + 0.5, 0, 1), which
    matches the exact area fraction to first order in the boundary
    curvature. (cy, cx) are in array index coordinates.
    Returns the bounding-box slices and the coverage block.
    """
    height, width = shape
    r0 = max(int(np.floor(cy - radius - 1)), 0)
    r1 = min(int(np.ceil(cy + radius + 2)), height)
    c0 = max(int(np.floor(cx - radius - 1)), 0)
    c1 = min(int(np.ceil(cx + radius + 2)), width)
    rows = np.arange(r0, r1, dtype=np.float64)[:, None]
    cols = np.arange(c0, c1, dtype=np.float64)[None, :]
    dist = np.sqrt((rows - cy) ** 2 + (cols - cx) ** 2)
    cov = np.clip(radius - dist + 0.5, 0.0, 1.0)
    return slice(r0, r1), slice(c0, c1), cov


def disk_phantom(size: int, radius: float, value: float = 1.0) -> Image:
    """Centered anti-aliased disk: the analytic reconstruction oracle."""
    if size <= 0 or radius <= 0:
        raise InvalidRangeError(f"disk phantom needs positive size and radius, got {size}, {radius}")
    if not 0.0 <= value <= 1.0:
        raise InvalidRangeError(f"disk value must lie in [0, 1], got {value}")
    img = np.zeros((size, size), dtype=np.float64)
    center = (size - 1) / 2.0
    rs, cs, cov = disk_coverage(img.shape, center, center, radius)
    img[rs, cs] = cov * value
    return Image(img.astype(IMAGE_DTYPE))
