"""
Image file formats.

IMGF layout (little-endian):
    magic "IMGF" | version u16 | width u32 | height u32 | lo f64 | hi f64
    | width*height f32, row-major

PGM export is P5 with maxval 65535 (big-endian samples, as the format
requires), pixel values 0..1 mapped linearly onto 0..65535; the stored
lo/hi go into a header comment.
"""

import struct
from pathlib import Path
from typing import Union

import numpy as np

from app.core.errors import FormatError
from app.imaging.image import Image

IMGF_MAGIC = b"IMGF"
IMGF_VERSION = 1
_IMGF_HEADER = struct.Struct("<4sHIIdd")

PathLike = Union[str, Path]


def encode_imgf(img: Image) -> bytes:
    header = _IMGF_HEADER.pack(IMGF_MAGIC, IMGF_VERSION, img.width, img.height,
                               float(img.lo), float(img.hi))
    payload = np.ascontiguousarray(img.data, dtype="<f4").tobytes()
    return header + payload


def decode_imgf(raw: bytes) -> Image:
    if len(raw) < _IMGF_HEADER.size:
        raise FormatError("IMGF header truncated")
    magic, version, width, height, lo, hi = _IMGF_HEADER.unpack_from(raw, 0)
    if magic != IMGF_MAGIC:
        raise FormatError(f"not an IMGF file (magic {magic!r})")
    if version != IMGF_VERSION:
        raise FormatError(f"unsupported IMGF version {version}")
    expected = width * height * 4
    payload = raw[_IMGF_HEADER.size:]
    if len(payload) != expected:
        raise FormatError(f"IMGF payload is {len(payload)} bytes, expected {expected}")
    data = np.frombuffer(payload, dtype="<f4").reshape(height, width).astype(np.float32)
    return Image(data, lo=lo, hi=hi)


def write_imgf(path: PathLike, img: Image) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_imgf(img))
    return path


def read_imgf(path: PathLike) -> Image:
    return decode_imgf(Path(path).read_bytes())


def write_pgm(path: PathLike, img: Image) -> Path:
    """16-bit binary PGM for eyeballing results."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    samples = np.round(np.clip(img.data.astype(np.float64), 0.0, 1.0) * 65535.0).astype(">u2")
    header = (
        f"P5\n# lo={img.lo:.9g} hi={img.hi:.9g}\n{img.width} {img.height}\n65535\n"
    ).encode("ascii")
    path.write_bytes(header + samples.tobytes())
    return path
