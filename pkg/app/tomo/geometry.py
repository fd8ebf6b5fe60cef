"""
2-D parallel-beam acquisition geometry.

Coordinates: pixel (r, c) sits at x = c - (N-1)/2, y = r - (N-1)/2.
Detector bin k sits at s = (k - (D-1)/2) * detector_spacing, and the ray
of view angle theta through bin k is {x cos(theta) + y sin(theta) = s}.
"""

import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

# Desk-scale defaults
DEFAULT_IMAGE_SIZE = 128
DEFAULT_VIEWS = 180
DEFAULT_DETECTORS = 192


class Geometry(BaseModel):
    """Parallel-beam geometry; angles are evenly spaced over [0, pi)."""
    model_config = ConfigDict(frozen=True)

    n_views: int = Field(default=DEFAULT_VIEWS, ge=1)
    n_detectors: int = Field(default=DEFAULT_DETECTORS, ge=1)
    detector_spacing: float = Field(default=1.0, gt=0.0)
    image_size: int = Field(default=DEFAULT_IMAGE_SIZE, ge=1)
    pixel_size: float = Field(default=1.0, gt=0.0)

    @model_validator(mode="after")
    def check_coverage(self) -> "Geometry":
        diagonal = self.image_size * math.sqrt(2.0)
        if self.n_detectors * self.detector_spacing < diagonal:
            raise ValueError(
                f"{self.n_detectors} detectors x {self.detector_spacing} spacing do not cover "
                f"the image diagonal {diagonal:.1f}"
            )
        return self

    @property
    def angles(self) -> np.ndarray:
        return np.arange(self.n_views, dtype=np.float64) * (np.pi / self.n_views)

    @property
    def detector_positions(self) -> np.ndarray:
        return (np.arange(self.n_detectors, dtype=np.float64) - (self.n_detectors - 1) / 2.0) * self.detector_spacing

    @property
    def shape(self):
        return self.n_views, self.n_detectors

    @classmethod
    def for_image(cls, image_size: int, n_views: int = DEFAULT_VIEWS, **kwargs) -> "Geometry":
        """Smallest detector row that covers the diagonal at unit spacing, rounded up to even."""
        spacing = kwargs.pop("detector_spacing", 1.0)
        n_det = int(math.ceil(image_size * math.sqrt(2.0) / spacing))
        n_det += n_det % 2
        return cls(n_views=n_views, n_detectors=n_det, detector_spacing=spacing,
                   image_size=image_size, **kwargs)
