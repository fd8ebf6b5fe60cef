"""Image core: representation, normalization, tiling, patches, datasets, file formats."""

from app.imaging.image import (
    Image,
    normalize,
    percentile_bounds,
    stitch,
    tile,
)
from app.imaging.patches import Patch, extract_patches
from app.imaging.dataset import ImagePair, PairedDataset, pair_dataset
from app.imaging.io import read_imgf, write_imgf, write_pgm

__all__ = [
    "Image",
    "normalize",
    "percentile_bounds",
    "stitch",
    "tile",
    "Patch",
    "extract_patches",
    "ImagePair",
    "PairedDataset",
    "pair_dataset",
    "read_imgf",
    "write_imgf",
    "write_pgm",
]
