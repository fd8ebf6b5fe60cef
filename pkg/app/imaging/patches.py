"""
Co-located patch extraction from low/high exposure pairs.
"""

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from app.core.errors import InvalidRangeError
from app.imaging.image import Image, check_same_shape


@dataclass(frozen=True)
class Patch:
    """Square crop of a source image."""
    origin: Tuple[int, int]
    size: int
    data: np.ndarray


def patch_origins(shape: Tuple[int, int], size: int, count: int, seed: int) -> List[Tuple[int, int]]:
    """Uniform random valid origins; overlap allowed, no rejection."""
    height, width = shape
    if size <= 0 or size > min(height, width):
        raise InvalidRangeError(f"patch size {size} does not fit image {shape}")
    if count <= 0:
        return []
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, height - size, size=count, endpoint=True)
    cols = rng.integers(0, width - size, size=count, endpoint=True)
    return [(int(r), int(c)) for r, c in zip(rows, cols)]


def crop(img: Image, origin: Tuple[int, int], size: int) -> Patch:
    r, c = origin
    block = img.data[r:r + size, c:c + size]
    block.setflags(write=False)
    return Patch(origin=origin, size=size, data=block)


def extract_patches(low: Image, high: Image, size: int, count: int, seed: int) -> List[Tuple[Patch, Patch]]:
    """
    Draw `count` pixel-aligned patch pairs from a low/high image pair.

    Identical seeds give identical origins; low and high patches always
    share their origin.
    """
    check_same_shape(low, high, "patch source images")
    origins = patch_origins(low.shape, size, count, seed)
    return [(crop(low, o, size), crop(high, o, size)) for o in origins]
