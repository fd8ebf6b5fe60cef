"""Image reconstruction from attenuation sinograms: FBP, SIRT and CGLS."""

from dataclasses import dataclass
from typing import Optional

from app.imaging.image import Image
from app.recon.config import Algorithm, RampFilter, ReconConfig
from app.recon.fbp import fbp
from app.recon.iterative import RESIDUAL_FIELDS, ResidualLog, cgls, find_semiconvergence, sirt
from app.tomo.sinogram import Sinogram


@dataclass
class ReconResult:
    image: Image
    log: ResidualLog


def reconstruct(sino: Sinogram, cfg: ReconConfig, truth: Optional[Image] = None) -> ReconResult:
    """Run the configured algorithm; FBP returns an empty residual log."""
    log = ResidualLog(algorithm=cfg.algorithm.value)
    if cfg.algorithm == Algorithm.FBP:
        image = fbp(sino, cfg)
    elif cfg.algorithm == Algorithm.SIRT:
        image = sirt(sino, cfg, truth=truth, log=log)
    else:
        image = cgls(sino, cfg, truth=truth, log=log)
    return ReconResult(image, log)


__all__ = [
    "RESIDUAL_FIELDS",
    "Algorithm",
    "RampFilter",
    "ReconConfig",
    "ReconResult",
    "ResidualLog",
    "cgls",
    "fbp",
    "find_semiconvergence",
    "reconstruct",
    "sirt",
]
