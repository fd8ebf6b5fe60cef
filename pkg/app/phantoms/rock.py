"""
Synthetic rock slices: overlapping anti-aliased grains with per-grain
density and band-limited texture, pore space at zero.

Porosity is steered toward the target by adding grains while the slice
is too porous and removing the newest grain when it overshoots.
"""

import logging
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import fft as sfft

from app.core.errors import PorosityUnreachableError
from app.imaging.image import IMAGE_DTYPE, Image
from app.metrics.quality import PORE_THRESHOLD, porosity_fraction
from app.phantoms.shapes import disk_coverage

logger = logging.getLogger(__name__)

# Steering band while adding/removing grains, and the accepted final tolerance
STEER_BAND = 0.02
POROSITY_TOLERANCE = 0.05
MAX_ITERATIONS = 20000

# Texture keeps frequencies below 1/8 of Nyquist (0.5 cycles/pixel)
TEXTURE_CUTOFF = 0.5 / 8.0


class RockPhantomSpec(BaseModel):
    """Parameters of one rock-like phantom."""
    model_config = ConfigDict(frozen=True)

    size: int = Field(default=128, ge=8)
    grain_count: int = Field(default=40, ge=0)
    grain_radius_range: Tuple[float, float] = (3.0, 10.0)
    grain_density_range: Tuple[float, float] = (0.45, 0.95)
    porosity_target: float = Field(default=0.3, ge=0.0, lt=1.0)
    texture_amplitude: float = Field(default=0.04, ge=0.0)
    seed: int = 0

    @model_validator(mode="after")
    def check_ranges(self) -> "RockPhantomSpec":
        r_min, r_max = self.grain_radius_range
        if not 0.0 <= r_min <= r_max:
            raise ValueError(f"grain_radius_range must satisfy 0 <= min <= max, got {self.grain_radius_range}")
        d_min, d_max = self.grain_density_range
        if not 0.0 <= d_min <= d_max <= 1.0:
            raise ValueError(f"grain_density_range must lie within [0, 1] with min <= max, got {self.grain_density_range}")
        return self


Grain = Tuple[float, float, float, float]  # (cy, cx, radius, density)


def _paint(canvas: np.ndarray, grain: Grain) -> None:
    cy, cx, radius, density = grain
    rs, cs, cov = disk_coverage(canvas.shape, cy, cx, radius)
    block = canvas[rs, cs]
    canvas[rs, cs] = block * (1.0 - cov) + density * cov


def _render(size: int, grains: List[Grain]) -> np.ndarray:
    canvas = np.zeros((size, size), dtype=np.float64)
    for g in grains:
        _paint(canvas, g)
    return canvas


def _draw_grain(rng: np.random.Generator, spec: RockPhantomSpec) -> Grain:
    cy, cx = rng.uniform(0.0, spec.size, size=2)
    radius = rng.uniform(*spec.grain_radius_range)
    density = rng.uniform(*spec.grain_density_range)
    return float(cy), float(cx), float(radius), float(density)


def band_limited_texture(size: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-variance noise with a radial low-pass cutoff."""
    white = rng.standard_normal((size, size))
    spectrum = sfft.rfft2(white)
    fy = sfft.fftfreq(size)[:, None]
    fx = sfft.rfftfreq(size)[None, :]
    spectrum[np.sqrt(fx ** 2 + fy ** 2) > TEXTURE_CUTOFF] = 0.0
    texture = sfft.irfft2(spectrum, s=(size, size))
    std = texture.std()
    return texture / std if std > 0 else texture


def rock_phantom(spec: RockPhantomSpec) -> Image:
    """Generate one rock slice; raises PorosityUnreachableError off target."""
    rng = np.random.default_rng(spec.seed)
    grains: List[Grain] = []
    canvas = np.zeros((spec.size, spec.size), dtype=np.float64)
    for _ in range(spec.grain_count):
        grain = _draw_grain(rng, spec)
        grains.append(grain)
        _paint(canvas, grain)

    iterations = 0
    achieved = porosity_fraction(canvas)
    while abs(achieved - spec.porosity_target) > STEER_BAND and iterations < MAX_ITERATIONS:
        iterations += 1
        if achieved > spec.porosity_target:
            grain = _draw_grain(rng, spec)
            grains.append(grain)
            _paint(canvas, grain)
        elif grains:
            grains.pop()
            canvas = _render(spec.size, grains)
        else:
            break
        achieved = porosity_fraction(canvas)

    texture = band_limited_texture(spec.size, rng) * spec.texture_amplitude
    solid = canvas >= PORE_THRESHOLD
    out = np.clip(canvas + texture * solid, 0.0, 1.0)
    achieved = porosity_fraction(out)
    if abs(achieved - spec.porosity_target) > POROSITY_TOLERANCE:
        raise PorosityUnreachableError(spec.porosity_target, achieved, iterations)

    logger.debug(
        f"Rock phantom seed={spec.seed}: {len(grains)} grains, porosity={achieved:.3f} "
        f"after {iterations} steering steps"
    )
    return Image(out.astype(IMAGE_DTYPE))
