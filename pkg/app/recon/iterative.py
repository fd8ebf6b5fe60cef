"""
Iterative reconstruction: SIRT and CGLS on the sparse projector.

Both start from a zero image and record the residual norm ||b - P x|| of
every iterate (plus RMSE against a known truth when one is given) in a
ResidualLog, so semi-convergence on noisy data can be located.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from app.core.errors import DataError, ShapeMismatchError
from app.imaging.image import IMAGE_DTYPE, Image
from app.recon.config import ReconConfig
from app.tomo.projector import Projector, get_projector
from app.tomo.sinogram import Sinogram, Stage

logger = logging.getLogger(__name__)

RESIDUAL_FIELDS = ["iteration", "residual_norm", "rmse_vs_truth"]


@dataclass
class ResidualEntry:
    iteration: int
    residual_norm: float
    rmse_vs_truth: Optional[float] = None


@dataclass
class ResidualLog:
    """Per-iteration residuals of one reconstruction job."""
    algorithm: str = ""
    entries: List[ResidualEntry] = field(default_factory=list)
    converged: bool = False

    def record(self, iteration: int, residual: float, rmse: Optional[float] = None) -> None:
        self.entries.append(ResidualEntry(iteration, float(residual), rmse))

    @property
    def residuals(self) -> List[float]:
        return [e.residual_norm for e in self.entries]

    @property
    def rmses(self) -> List[Optional[float]]:
        return [e.rmse_vs_truth for e in self.entries]

    def rows(self) -> List[dict]:
        """CSV cells keyed by RESIDUAL_FIELDS; an unknown RMSE is blank."""
        return [{
            "iteration": e.iteration,
            "residual_norm": f"{e.residual_norm:.9g}",
            "rmse_vs_truth": "" if e.rmse_vs_truth is None else f"{e.rmse_vs_truth:.9g}",
        } for e in self.entries]


def find_semiconvergence(log: ResidualLog) -> int:
    """Iteration with the lowest RMSE against truth."""
    scored = [e for e in log.entries if e.rmse_vs_truth is not None]
    if not scored:
        raise DataError("residual log has no RMSE values; reconstruct with a truth image")
    best = min(scored, key=lambda e: (e.rmse_vs_truth, e.iteration))
    return best.iteration


def _truth_array(truth: Optional[Image], sino: Sinogram) -> Optional[np.ndarray]:
    if truth is None:
        return None
    n = sino.geometry.image_size
    if truth.shape != (n, n):
        raise ShapeMismatchError(f"truth {truth.shape} does not match geometry image_size {n}")
    return truth.data.astype(np.float64)


def _rmse(x: np.ndarray, truth: Optional[np.ndarray]) -> Optional[float]:
    if truth is None:
        return None
    return float(np.sqrt(np.mean((x - truth) ** 2)))


def _inverse(sums: np.ndarray) -> np.ndarray:
    out = np.zeros_like(sums)
    nz = sums > 0
    out[nz] = 1.0 / sums[nz]
    return out


def sirt(sino: Sinogram, cfg: ReconConfig, truth: Optional[Image] = None,
         log: Optional[ResidualLog] = None) -> Image:
    """
    x <- x + relaxation * C P^T R (b - P x), starting from zero.

    R and C hold the inverse row and column sums of P; rays or pixels with
    zero sums get zero weight. The non-negativity clamp, when on, is
    applied after every update.
    """
    sino.require(Stage.ATTENUATION)
    proj: Projector = get_projector(sino.geometry)
    n = sino.geometry.image_size
    b = sino.data.astype(np.float64)
    ref = _truth_array(truth, sino)
    row_w = _inverse(proj.row_sums()).reshape(sino.geometry.shape)
    col_w = _inverse(proj.column_sums()).reshape(n, n)
    log = log if log is not None else ResidualLog()
    log.algorithm = "sirt"

    x = np.zeros((n, n), dtype=np.float64)
    residual = b - proj.forward(x)
    log.record(0, np.linalg.norm(residual), _rmse(x, ref))
    for k in range(1, cfg.iterations + 1):
        x += cfg.relaxation * col_w * proj.adjoint(row_w * residual)
        if cfg.nonneg_clamp:
            np.maximum(x, 0.0, out=x)
        residual = b - proj.forward(x)
        norm = np.linalg.norm(residual)
        log.record(k, norm, _rmse(x, ref))
        logger.debug(f"SIRT it={k} residual={norm:.6g}")
    return Image(x.astype(IMAGE_DTYPE))


def cgls(sino: Sinogram, cfg: ReconConfig, truth: Optional[Image] = None,
         log: Optional[ResidualLog] = None) -> Image:
    """
    Conjugate gradient least squares on ||P x - b||^2, starting from zero.

    Breakdown (a zero search direction or zero normal-equation residual)
    ends the run early with log.converged set. The non-negativity clamp
    only touches the returned image.
    """
    sino.require(Stage.ATTENUATION)
    proj = get_projector(sino.geometry)
    n = sino.geometry.image_size
    b = sino.data.astype(np.float64)
    ref = _truth_array(truth, sino)
    log = log if log is not None else ResidualLog()
    log.algorithm = "cgls"

    def scored(img: np.ndarray) -> Optional[float]:
        return _rmse(np.maximum(img, 0.0) if cfg.nonneg_clamp else img, ref)

    x = np.zeros((n, n), dtype=np.float64)
    r = b.copy()
    s = proj.adjoint(r)
    p = s.copy()
    gamma = float(np.vdot(s, s))
    log.record(0, np.linalg.norm(r), scored(x))
    for k in range(1, cfg.iterations + 1):
        if gamma == 0.0:
            log.converged = True
            break
        q = proj.forward(p)
        delta = float(np.vdot(q, q))
        if delta == 0.0:
            log.converged = True
            break
        alpha = gamma / delta
        x += alpha * p
        r -= alpha * q
        s = proj.adjoint(r)
        gamma_next = float(np.vdot(s, s))
        norm = np.linalg.norm(r)
        log.record(k, norm, scored(x))
        logger.debug(f"CGLS it={k} residual={norm:.6g}")
        p = s + (gamma_next / gamma) * p
        gamma = gamma_next
    if log.converged:
        logger.info(f"CGLS converged early after {log.entries[-1].iteration} iterations")
    if cfg.nonneg_clamp:
        np.maximum(x, 0.0, out=x)
    return Image(x.astype(IMAGE_DTYPE))
