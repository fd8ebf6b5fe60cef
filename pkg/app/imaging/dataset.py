"""
Paired low/high exposure datasets with a seeded train/test split.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import InvalidRangeError, ShapeMismatchError
from app.imaging.image import Image

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ImagePair:
    """One low/high exposure pair with optional ground truth."""
    low: Image
    high: Image
    truth: Optional[Image] = None
    image_id: str = ""

    def reference(self, prefer_truth: bool = True) -> Image:
        """Image that metrics compare against."""
        if prefer_truth and self.truth is not None:
            return self.truth
        return self.high


@dataclass(frozen=True)
class PairedDataset:
    """Pairs plus disjoint train/test index lists."""
    pairs: Tuple[ImagePair, ...]
    train_idx: Tuple[int, ...]
    test_idx: Tuple[int, ...] = field(default_factory=tuple)

    @property
    def train(self) -> List[ImagePair]:
        return [self.pairs[i] for i in self.train_idx]

    @property
    def test(self) -> List[ImagePair]:
        return [self.pairs[i] for i in self.test_idx]

    def __len__(self) -> int:
        return len(self.pairs)

    def subset_train(self, n: int) -> "PairedDataset":
        """First n training pairs, same test set."""
        if n <= 0 or n > len(self.train_idx):
            raise InvalidRangeError(f"cannot take {n} of {len(self.train_idx)} training pairs")
        return PairedDataset(self.pairs, self.train_idx[:n], self.test_idx)


def pair_dataset(low_images: Sequence[Image],
                 high_images: Sequence[Image],
                 ground_truth_images: Optional[Sequence[Image]] = None,
                 train_fraction: float = 0.8,
                 seed: int = 0,
                 image_ids: Optional[Sequence[str]] = None) -> PairedDataset:
    """Pair images by index, shuffle with the seed, and split."""
    if len(low_images) != len(high_images):
        raise ShapeMismatchError(
            f"low/high series lengths differ: {len(low_images)} vs {len(high_images)}"
        )
    if ground_truth_images is not None and len(ground_truth_images) != len(low_images):
        raise ShapeMismatchError(
            f"ground truth series length {len(ground_truth_images)} != {len(low_images)}"
        )
    if not 0.0 < train_fraction < 1.0:
        raise InvalidRangeError(f"train_fraction must be in (0, 1), got {train_fraction}")

    pairs = []
    for i, (low, high) in enumerate(zip(low_images, high_images)):
        truth = ground_truth_images[i] if ground_truth_images is not None else None
        if low.shape != high.shape or (truth is not None and truth.shape != low.shape):
            raise ShapeMismatchError(f"pair {i} has mismatched dimensions")
        image_id = image_ids[i] if image_ids is not None else f"{i:05d}"
        pairs.append(ImagePair(low=low, high=high, truth=truth, image_id=image_id))

    order = np.random.default_rng(seed).permutation(len(pairs))
    n_train = int(round(train_fraction * len(pairs)))
    train_idx = tuple(int(i) for i in order[:n_train])
    test_idx = tuple(int(i) for i in order[n_train:])
    if not test_idx:
        logger.warning("Train fraction leaves an empty test split")
    return PairedDataset(tuple(pairs), train_idx, test_idx)
