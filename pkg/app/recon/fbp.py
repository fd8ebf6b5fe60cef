"""
Filtered backprojection.

Each view row is ramp-filtered by FFT after zero padding to the next power
of two at least twice the detector count, then smeared back over the image
with linear interpolation between detector bins and scaled by pi / n_views.
The ramp is the FFT of the spatial Ram-Lak kernel, which keeps the DC term
right for finite rows.
"""

import logging
from functools import lru_cache

import numpy as np
from scipy import fft as sfft

from app.core.errors import InvalidRangeError
from app.core.parallel import map_chunks
from app.imaging.image import IMAGE_DTYPE, Image
from app.recon.config import RampFilter, ReconConfig
from app.tomo.geometry import Geometry
from app.tomo.sinogram import Sinogram, Stage

logger = logging.getLogger(__name__)


def padded_length(n_detectors: int) -> int:
    """Next power of two >= 2 * n_detectors."""
    return 1 << int(np.ceil(np.log2(max(2 * n_detectors, 2))))


@lru_cache(maxsize=16)
def ramp_response(length: int, window: RampFilter = RampFilter.RAM_LAK) -> np.ndarray:
    """Frequency response of the (optionally Hann-windowed) ramp, unit sample spacing."""
    n = np.concatenate([np.arange(0, length // 2 + 1), np.arange(-(length // 2) + 1, 0)])
    kernel = np.zeros(length, dtype=np.float64)
    kernel[0] = 0.25
    odd = n % 2 == 1
    kernel[odd] = -1.0 / (np.pi * n[odd]) ** 2
    response = np.real(sfft.fft(kernel))
    if window == RampFilter.HANN:
        freq = sfft.fftfreq(length)
        response = response * 0.5 * (1.0 + np.cos(2.0 * np.pi * freq))
    response.setflags(write=False)
    return response


def filter_rows(data: np.ndarray, geo: Geometry, window: RampFilter = RampFilter.RAM_LAK) -> np.ndarray:
    """Ramp-filter every view; result is scaled to attenuation per pixel_size."""
    n_det = data.shape[1]
    length = padded_length(n_det)
    spectrum = sfft.fft(data.astype(np.float64), n=length, axis=1)
    filtered = np.real(sfft.ifft(spectrum * ramp_response(length, window)[None, :], axis=1))
    return filtered[:, :n_det] / (geo.detector_spacing * geo.pixel_size)


def backproject_filtered(rows: np.ndarray, geo: Geometry) -> np.ndarray:
    """
    Pixel-driven backprojection of filtered rows, scaled by pi / n_views.

    Work is split over image rows; every pixel sums its views in order.
    """
    n = geo.image_size
    centers = np.arange(n, dtype=np.float64) - (n - 1) / 2.0
    bins = np.arange(geo.n_detectors, dtype=np.float64)
    offset = (geo.n_detectors - 1) / 2.0
    angles = geo.angles

    def band(start: int, stop: int) -> np.ndarray:
        y = centers[start:stop, None]
        x = centers[None, :]
        acc = np.zeros((stop - start, n), dtype=np.float64)
        for view, theta in enumerate(angles):
            u = (x * np.cos(theta) + y * np.sin(theta)) / geo.detector_spacing + offset
            acc += np.interp(u, bins, rows[view], left=0.0, right=0.0)
        return acc

    image = np.concatenate(map_chunks(band, n), axis=0)
    return image * (np.pi / geo.n_views)


def fbp(sino: Sinogram, cfg: ReconConfig) -> Image:
    """Filtered backprojection of an attenuation sinogram."""
    sino.require(Stage.ATTENUATION)
    geo = sino.geometry
    if geo.n_views < 2:
        raise InvalidRangeError(f"FBP needs at least 2 views, got {geo.n_views}")
    filtered = filter_rows(sino.data, geo, cfg.filter)
    image = backproject_filtered(filtered, geo)
    if cfg.nonneg_clamp:
        np.maximum(image, 0.0, out=image)
    logger.debug(f"FBP ({cfg.filter.value}) on {geo.n_views} views -> {geo.image_size}px")
    return Image(image.astype(IMAGE_DTYPE))
