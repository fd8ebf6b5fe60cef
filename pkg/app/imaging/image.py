"""
Image representation for CT Restore.
2-D attenuation fields, normalization, and tiling.
"""

import logging
from dataclasses import dataclass, replace
from typing import List, Sequence, Tuple

import numpy as np

from app.core.errors import DataError, InvalidRangeError, ShapeMismatchError

logger = logging.getLogger(__name__)

IMAGE_DTYPE = np.float32

# Dataset-global normalization percentiles (computed over the high-exposure series)
LOW_PERCENTILE = 0.1
HIGH_PERCENTILE = 99.9


def _frozen(data: np.ndarray, dtype=IMAGE_DTYPE) -> np.ndarray:
    arr = np.array(data, dtype=dtype, copy=True, order="C")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Image:
    """
    Immutable 2-D scalar field, row-major.

    lo/hi give the physical value range that pixel values 0 and 1 stand
    for (physical = lo + v * (hi - lo)). normalize composes them, so paired
    low/high images can be checked to share one affine map.
    origin is the (row, col) of this image inside its source when it is a tile.
    """
    data: np.ndarray
    lo: float = 0.0
    hi: float = 1.0
    origin: Tuple[int, int] = (0, 0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] == 0:
            raise ShapeMismatchError(f"image must be a non-empty 2-D array, got shape {data.shape}")
        dtype = data.dtype if data.dtype in (np.float32, np.float64) else IMAGE_DTYPE
        arr = _frozen(data, dtype)
        if not np.all(np.isfinite(arr)):
            raise DataError("image contains non-finite values")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    def with_data(self, data: np.ndarray) -> "Image":
        """Same metadata, new pixels."""
        return replace(self, data=data)


def check_same_shape(a: Image, b: Image, what: str = "images") -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{what} differ in shape: {a.shape} vs {b.shape}")


def normalize(img: Image, lo: float, hi: float) -> Image:
    """
    Map [lo, hi] affinely onto [0, 1] and clamp.
    The output's lo/hi metadata composes the map with the input's, so the
    physical meaning of 0 and 1 is preserved.
    """
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
        raise InvalidRangeError(f"normalization needs hi > lo, got lo={lo}, hi={hi}")
    if lo == 0.0 and hi == 1.0:
        # identity map: clamping only, keeps normalize idempotent bit-for-bit
        out = np.clip(img.data, 0.0, 1.0)
    else:
        scale = 1.0 / (float(hi) - float(lo))
        out = np.clip((img.data.astype(np.float64) - lo) * scale, 0.0, 1.0)
    span = img.hi - img.lo
    return Image(
        out.astype(img.data.dtype),
        lo=img.lo + lo * span,
        hi=img.lo + hi * span,
        origin=img.origin,
    )


def percentile_bounds(images: Sequence[Image],
                      low: float = LOW_PERCENTILE,
                      high: float = HIGH_PERCENTILE) -> Tuple[float, float]:
    """Dataset-global normalization bounds from pooled pixel percentiles."""
    if not images:
        raise InvalidRangeError("percentile_bounds needs at least one image")
    pooled = np.concatenate([img.data.ravel() for img in images]).astype(np.float64)
    lo, hi = np.percentile(pooled, [low, high])
    if hi <= lo:
        hi = lo + 1.0
        logger.warning(f"Degenerate intensity range, widening to [{lo:.4f}, {hi:.4f}]")
    return float(lo), float(hi)


def tile(img: Image, tile_size: int) -> List[Image]:
    """
    Split into non-overlapping square tiles, row-major order.
    Ragged borders are dropped; each tile records its origin.
    """
    if tile_size <= 0:
        raise InvalidRangeError(f"tile size must be positive, got {tile_size}")
    if tile_size > min(img.height, img.width):
        raise InvalidRangeError(
            f"tile size {tile_size} exceeds image dimension {min(img.height, img.width)}"
        )
    rows = img.height // tile_size
    cols = img.width // tile_size
    tiles = []
    for r in range(rows):
        for c in range(cols):
            r0, c0 = r * tile_size, c * tile_size
            block = img.data[r0:r0 + tile_size, c0:c0 + tile_size]
            tiles.append(Image(block, lo=img.lo, hi=img.hi, origin=(r0, c0)))
    return tiles


def stitch(tiles: Sequence[Image], shape: Tuple[int, int]) -> Image:
    """Reassemble tiles at their origins; uncovered pixels stay 0."""
    if not tiles:
        raise InvalidRangeError("stitch needs at least one tile")
    out = np.zeros(shape, dtype=tiles[0].data.dtype)
    for t in tiles:
        r0, c0 = t.origin
        if r0 + t.height > shape[0] or c0 + t.width > shape[1]:
            raise ShapeMismatchError(f"tile at {t.origin} does not fit in {shape}")
        out[r0:r0 + t.height, c0:c0 + t.width] = t.data
    return Image(out, lo=tiles[0].lo, hi=tiles[0].hi)
