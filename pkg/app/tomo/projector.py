"""
Ray-driven (Joseph) parallel-beam projector.

Each ray is stepped one pixel at a time along whichever image axis it is
closer to; at every step the image is linearly interpolated between the
two neighbouring pixels across the ray, and the sample is weighted by the
path length per step (1/|cos| or 1/|sin|). The weights for one geometry
form a sparse matrix, so the backprojection used by the iterative solvers
is its exact transpose.

Both directions are row-chunked matrix-vector products over independent
outputs (rays forward, pixels backward), so results do not depend on the
worker count.
"""

import logging
from functools import lru_cache
from typing import Dict, List, Tuple

import numpy as np
from scipy import sparse

from app.core.errors import ShapeMismatchError
from app.core.parallel import chunk_bounds, get_workers, map_items
from app.imaging.image import Image
from app.tomo.geometry import Geometry
from app.tomo.sinogram import Sinogram, Stage

logger = logging.getLogger(__name__)


def _view_weights(theta: float, s: np.ndarray, n: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Joseph weights of all rays of one view: (ray index, pixel index, weight)."""
    c, sn = np.cos(theta), np.sin(theta)
    centers = np.arange(n, dtype=np.float64) - (n - 1) / 2.0
    det = np.arange(s.size)

    if abs(c) >= abs(sn):
        # step over rows: x = (s - y sin) / cos
        step = 1.0 / abs(c)
        across = (s[:, None] - centers[None, :] * sn) / c + (n - 1) / 2.0
        along_idx = np.broadcast_to(np.arange(n)[None, :], across.shape)
        row_major = True
    else:
        # step over columns: y = (s - x cos) / sin
        step = 1.0 / abs(sn)
        across = (s[:, None] - centers[None, :] * c) / sn + (n - 1) / 2.0
        along_idx = np.broadcast_to(np.arange(n)[None, :], across.shape)
        row_major = False

    lower = np.floor(across).astype(np.int64)
    frac = across - lower
    rays = np.broadcast_to(det[:, None], across.shape)

    out_rays, out_pix, out_w = [], [], []
    for offset, weight in ((0, 1.0 - frac), (1, frac)):
        idx = lower + offset
        keep = (idx >= 0) & (idx < n) & (weight > 0)
        if row_major:
            pix = along_idx[keep] * n + idx[keep]
        else:
            pix = idx[keep] * n + along_idx[keep]
        out_rays.append(rays[keep])
        out_pix.append(pix)
        out_w.append(weight[keep] * step)
    return np.concatenate(out_rays), np.concatenate(out_pix), np.concatenate(out_w)


class Projector:
    """Sparse system matrix of one geometry with chunked matvecs."""

    def __init__(self, geo: Geometry):
        self.geometry = geo
        n = geo.image_size
        s = geo.detector_positions
        rows, cols, vals = [], [], []
        for v, theta in enumerate(geo.angles):
            r, c, w = _view_weights(theta, s, n)
            rows.append(r + v * geo.n_detectors)
            cols.append(c)
            vals.append(w)
        shape = (geo.n_views * geo.n_detectors, n * n)
        matrix = sparse.coo_matrix(
            (np.concatenate(vals) * geo.pixel_size, (np.concatenate(rows), np.concatenate(cols))),
            shape=shape,
        ).tocsr()
        matrix.sum_duplicates()
        matrix.sort_indices()
        self.matrix = matrix
        self.matrix_t = matrix.T.tocsr()
        self.matrix_t.sort_indices()
        self._block_cache: Dict[tuple, List[sparse.csr_matrix]] = {}
        logger.debug(f"Projector built: {shape[0]} rays x {shape[1]} pixels, {matrix.nnz} weights")

    def _blocks(self, matrix: sparse.csr_matrix) -> List[sparse.csr_matrix]:
        """Row blocks of a matrix for the current worker count, built once."""
        key = (id(matrix), get_workers())
        if key not in self._block_cache:
            bounds = chunk_bounds(matrix.shape[0], key[1])
            self._block_cache[key] = [matrix[a:b] for a, b in bounds]
        return self._block_cache[key]

    def _matvec(self, matrix: sparse.csr_matrix, vec: np.ndarray) -> np.ndarray:
        vec = np.ascontiguousarray(vec, dtype=np.float64)
        blocks = self._blocks(matrix)
        parts = map_items(lambda block: block @ vec, blocks)
        return np.concatenate(parts)

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Image array (N, N) -> sinogram array (views, detectors), float64."""
        n = self.geometry.image_size
        if x.shape != (n, n):
            raise ShapeMismatchError(f"image shape {x.shape} does not match geometry size {n}")
        return self._matvec(self.matrix, x.ravel()).reshape(self.geometry.shape)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        """Sinogram array -> image array, the exact transpose of forward."""
        if y.shape != self.geometry.shape:
            raise ShapeMismatchError(f"sinogram shape {y.shape} does not match geometry {self.geometry.shape}")
        n = self.geometry.image_size
        return self._matvec(self.matrix_t, y.ravel()).reshape(n, n)

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    def column_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=0)).ravel()


@lru_cache(maxsize=4)
def get_projector(geo: Geometry) -> Projector:
    """Cached projector per geometry."""
    return Projector(geo)


def forward_project(img: Image, geo: Geometry) -> Sinogram:
    """Line integrals of an image (values x path length x pixel_size)."""
    if img.shape != (geo.image_size, geo.image_size):
        raise ShapeMismatchError(
            f"image {img.shape} does not match geometry image_size {geo.image_size}"
        )
    data = get_projector(geo).forward(img.data.astype(np.float64))
    return Sinogram(geo, Stage.LINE_INTEGRAL, data)


def backproject(sino: Sinogram) -> Image:
    """Adjoint projection of any-stage sinogram data."""
    data = get_projector(sino.geometry).adjoint(sino.data.astype(np.float64))
    return Image(data)
