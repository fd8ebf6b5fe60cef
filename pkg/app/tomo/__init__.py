"""Parallel-beam projection and detector noise simulation."""

from app.tomo.geometry import Geometry
from app.tomo.sinogram import Sinogram, Stage, read_sinf, write_sinf
from app.tomo.projector import Projector, backproject, forward_project, get_projector
from app.tomo.exposure import (
    ExposureModel,
    apply_exposure,
    counts_to_attenuation,
    ideal_attenuation,
    mean_counts,
)

__all__ = [
    "Geometry",
    "Sinogram",
    "Stage",
    "read_sinf",
    "write_sinf",
    "Projector",
    "backproject",
    "forward_project",
    "get_projector",
    "ExposureModel",
    "apply_exposure",
    "counts_to_attenuation",
    "ideal_attenuation",
    "mean_counts",
]
