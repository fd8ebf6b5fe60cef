"""
Exposure-dependent photon noise at the detector.

A line integral p becomes a Poisson count with mean I0 * exp(-p), where
the flux I0 scales linearly with exposure time. The log transform back to
attenuation carries that noise into the reconstruction.

Sampling draws every view from its own seeded stream, so a bin's count
depends only on (seed, view, bin) and not on how views are spread over
workers.
"""

import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.core.errors import FluxOverflowError
from app.core.parallel import map_items
from app.tomo.sinogram import Sinogram, Stage

logger = logging.getLogger(__name__)

DEFAULT_I0 = 1.0e4
REFERENCE_EXPOSURE = 1.4
LOW_EXPOSURE = 0.5

# Means at or above this use the rounded Gaussian approximation
GAUSSIAN_THRESHOLD = 30.0

# Largest mean count; counts stay exact integers in float32 below 2**24
MAX_MEAN_COUNTS = float(2 ** 24)

# Hard stop for the sequential search (P(k > 200 | lambda < 30) is ~0)
_MAX_SEARCH = 200


class ExposureModel(BaseModel):
    """Photon flux model for one exposure time."""
    model_config = ConfigDict(frozen=True)

    i0_reference: float = Field(default=DEFAULT_I0, gt=0.0)
    reference_exposure: float = Field(default=REFERENCE_EXPOSURE, gt=0.0)
    exposure: float = Field(default=REFERENCE_EXPOSURE, gt=0.0)
    seed: int = Field(default=0, ge=0)

    @property
    def flux(self) -> float:
        """Effective unattenuated counts per bin, I0."""
        return self.i0_reference * self.exposure / self.reference_exposure

    def with_seed(self, seed: int) -> "ExposureModel":
        return self.model_copy(update={"seed": seed})


def mean_counts(sino: Sinogram, model: ExposureModel) -> np.ndarray:
    """Expected counts lambda = I0 * exp(-p) per bin, float64."""
    sino.require(Stage.LINE_INTEGRAL)
    return model.flux * np.exp(-sino.data.astype(np.float64))


def _sequential_search(lam: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Poisson inversion: smallest k with CDF(k) >= u, vectorized over bins."""
    k = np.zeros(lam.shape, dtype=np.float64)
    prob = np.exp(-lam)
    cdf = prob.copy()
    active = u > cdf
    step = 0
    while np.any(active) and step < _MAX_SEARCH:
        step += 1
        k[active] += 1.0
        prob[active] *= lam[active] / k[active]
        cdf[active] += prob[active]
        active &= u > cdf
    return k


def sample_poisson(lam: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """
    Poisson draws for a 1-D array of means.

    Small means use inversion by sequential search; means of 30 and above
    use round(lambda + sqrt(lambda) z) clamped at 0. Both branches consume
    one uniform and one normal per bin, so every bin uses a fixed slot of
    the stream.
    """
    u = rng.random(lam.shape)
    z = rng.standard_normal(lam.shape)
    out = np.empty(lam.shape, dtype=np.float64)
    small = lam < GAUSSIAN_THRESHOLD
    out[small] = _sequential_search(lam[small], u[small])
    big = ~small
    out[big] = np.maximum(np.rint(lam[big] + np.sqrt(lam[big]) * z[big]), 0.0)
    return out


def apply_exposure(sino: Sinogram, model: ExposureModel) -> Sinogram:
    """Line integrals -> seeded Poisson photon counts."""
    lam = mean_counts(sino, model)
    peak = float(lam.max()) if lam.size else 0.0
    if peak > MAX_MEAN_COUNTS:
        raise FluxOverflowError(
            f"mean count {peak:.3g} exceeds the sampler cap {MAX_MEAN_COUNTS:.3g}; lower i0_reference"
        )

    def draw(view: int) -> np.ndarray:
        rng = np.random.default_rng([model.seed, view])
        return sample_poisson(lam[view], rng)

    rows = map_items(draw, list(range(lam.shape[0])))
    counts = np.stack(rows) if rows else np.zeros_like(lam)
    logger.debug(
        f"Exposure {model.exposure:.2f}s (I0={model.flux:.1f}, seed={model.seed}): "
        f"{int(np.count_nonzero(counts == 0))} starved bins"
    )
    return Sinogram(sino.geometry, Stage.PHOTON_COUNTS, counts)


def attenuation_from_counts(counts: np.ndarray, flux: float) -> np.ndarray:
    """-ln(max(count, 1) / I0), clamped at 0 from below."""
    est = -np.log(np.maximum(counts.astype(np.float64), 1.0) / flux)
    return np.maximum(est, 0.0)


def counts_to_attenuation(sino: Sinogram, model: ExposureModel) -> Sinogram:
    """Beer-Lambert log transform of photon counts."""
    sino.require(Stage.PHOTON_COUNTS)
    return Sinogram(sino.geometry, Stage.ATTENUATION, attenuation_from_counts(sino.data, model.flux))


def ideal_attenuation(sino: Sinogram) -> Sinogram:
    """Noiseless detector: the line integrals themselves as measured attenuation."""
    sino.require(Stage.LINE_INTEGRAL)
    return Sinogram(sino.geometry, Stage.ATTENUATION, sino.data)
