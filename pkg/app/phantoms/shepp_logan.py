"""
Shepp-Logan head phantom.

Ten ellipses on the [-1, 1]^2 square, y pointing up (row 0 is the top).
The "modified" intensities (higher contrast, the usual choice for
visual work) are the default; "original" keeps the classic values.
"""

from typing import Dict, List, Tuple

import numpy as np

from app.core.errors import InvalidRangeError
from app.imaging.image import IMAGE_DTYPE, Image

MIN_SIZE = 16

# (x0, y0, a, b, phi_degrees) shared by both variants
ELLIPSES: List[Tuple[float, float, float, float, float]] = [
    (0.0, 0.0, 0.69, 0.92, 0.0),
    (0.0, -0.0184, 0.6624, 0.874, 0.0),
    (0.22, 0.0, 0.11, 0.31, -18.0),
    (-0.22, 0.0, 0.16, 0.41, 18.0),
    (0.0, 0.35, 0.21, 0.25, 0.0),
    (0.0, 0.1, 0.046, 0.046, 0.0),
    (0.0, -0.1, 0.046, 0.046, 0.0),
    (-0.08, -0.605, 0.046, 0.023, 0.0),
    (0.0, -0.606, 0.023, 0.023, 0.0),
    (0.06, -0.605, 0.023, 0.046, 0.0),
]

INTENSITIES: Dict[str, List[float]] = {
    "modified": [1.0, -0.8, -0.2, -0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1],
    "original": [2.0, -0.98, -0.02, -0.02, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01],
}

# Peak attenuation of each variant (the outer rim), used to scale into [0, 1]
PEAK = {"modified": 1.0, "original": 2.0}


def _sample_grid(size: int, supersample: int) -> Tuple[np.ndarray, np.ndarray]:
    n = size * supersample
    centers = (np.arange(n, dtype=np.float64) + 0.5) * (2.0 / n) - 1.0
    x = centers[None, :]
    y = -centers[:, None]
    return x, y


def shepp_logan(size: int, variant: str = "modified", supersample: int = 1) -> Image:
    """Render the phantom; supersample > 1 averages s x s sub-pixel samples."""
    if size < MIN_SIZE:
        raise InvalidRangeError(f"Shepp-Logan size must be >= {MIN_SIZE}, got {size}")
    if variant not in INTENSITIES:
        raise InvalidRangeError(f"unknown Shepp-Logan variant '{variant}'")
    if supersample < 1:
        raise InvalidRangeError(f"supersample must be >= 1, got {supersample}")

    x, y = _sample_grid(size, supersample)
    field = np.zeros((y.shape[0], x.shape[1]), dtype=np.float64)
    for (x0, y0, a, b, phi), value in zip(ELLIPSES, INTENSITIES[variant]):
        t = np.deg2rad(phi)
        dx = x - x0
        dy = y - y0
        u = dx * np.cos(t) + dy * np.sin(t)
        v = -dx * np.sin(t) + dy * np.cos(t)
        field += value * ((u / a) ** 2 + (v / b) ** 2 <= 1.0)

    if supersample > 1:
        field = field.reshape(size, supersample, size, supersample).mean(axis=(1, 3))
    field = np.clip(field / PEAK[variant], 0.0, 1.0)
    return Image(field.astype(IMAGE_DTYPE))
