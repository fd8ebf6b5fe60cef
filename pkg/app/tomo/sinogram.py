"""
Sinograms and the SINF file format.

SINF layout (little-endian):
    magic "SINF" | version u16 | stage u8 | n_views u32 | n_detectors u32
    | image_size u32 | detector_spacing f64 | pixel_size f64
    | n_views*n_detectors f32, view-major
"""

import struct
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Union

import numpy as np

from app.core.errors import DataError, FormatError, ShapeMismatchError, StageError
from app.tomo.geometry import Geometry


class Stage(IntEnum):
    LINE_INTEGRAL = 0
    PHOTON_COUNTS = 1
    ATTENUATION = 2


@dataclass(frozen=True)
class Sinogram:
    """Projection data indexed by (view, detector bin)."""
    geometry: Geometry
    stage: Stage
    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, copy=True)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if arr.shape != self.geometry.shape:
            raise ShapeMismatchError(f"sinogram shape {arr.shape} != geometry {self.geometry.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError("sinogram contains non-finite values")
        if self.stage in (Stage.LINE_INTEGRAL, Stage.ATTENUATION) and np.any(arr < 0):
            raise DataError(f"{self.stage.name} sinogram has negative values")
        if self.stage == Stage.PHOTON_COUNTS and (np.any(arr < 0) or np.any(arr != np.floor(arr))):
            raise DataError("photon counts must be non-negative integers")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "stage", Stage(self.stage))

    def require(self, stage: Stage) -> None:
        if self.stage != stage:
            raise StageError(f"expected a {stage.name} sinogram, got {self.stage.name}")


SINF_MAGIC = b"SINF"
SINF_VERSION = 1
_SINF_HEADER = struct.Struct("<4sHBIIIdd")

PathLike = Union[str, Path]


def encode_sinf(sino: Sinogram) -> bytes:
    geo = sino.geometry
    header = _SINF_HEADER.pack(SINF_MAGIC, SINF_VERSION, int(sino.stage), geo.n_views,
                               geo.n_detectors, geo.image_size, geo.detector_spacing,
                               geo.pixel_size)
    return header + np.ascontiguousarray(sino.data, dtype="<f4").tobytes()


def decode_sinf(raw: bytes) -> Sinogram:
    if len(raw) < _SINF_HEADER.size:
        raise FormatError("SINF header truncated")
    magic, version, stage, n_views, n_det, image_size, spacing, pixel_size = _SINF_HEADER.unpack_from(raw, 0)
    if magic != SINF_MAGIC:
        raise FormatError(f"not a SINF file (magic {magic!r})")
    if version != SINF_VERSION:
        raise FormatError(f"unsupported SINF version {version}")
    try:
        stage = Stage(stage)
    except ValueError:
        raise FormatError(f"unknown SINF stage tag {stage}")
    payload = raw[_SINF_HEADER.size:]
    if len(payload) != n_views * n_det * 4:
        raise FormatError(f"SINF payload is {len(payload)} bytes, expected {n_views * n_det * 4}")
    geo = Geometry(n_views=n_views, n_detectors=n_det, image_size=image_size,
                   detector_spacing=spacing, pixel_size=pixel_size)
    data = np.frombuffer(payload, dtype="<f4").reshape(n_views, n_det).astype(np.float32)
    return Sinogram(geo, stage, data)


def write_sinf(path: PathLike, sino: Sinogram) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_sinf(sino))
    return path


def read_sinf(path: PathLike) -> Sinogram:
    return decode_sinf(Path(path).read_bytes())
