"""
NNWT weight files and warm starts.

Layout (little-endian):
    magic "NNWT" | version u16 | topology tag u8 | n_hyper u16 | n_hyper x i32
    | adam step u64 | layer count u32
    then per layer:
    kind u8 | n_dims u8 | n_dims x u32
    | for conv/tconv: weights f32, biases f32, moments flag u8,
      and when set m_w, v_w, m_b, v_b as f32
Shape dims are (in_c, out_c, k) for conv, (in_c, out_c) for tconv,
(source,) for concat and empty otherwise.
"""

import logging
import struct
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from app.core.errors import FormatError, TopologyMismatchError
from app.neural.layers import ConcatSkip, Conv2D, Layer, LayerKind, TConv2D
from app.neural.network import Network, Topology, TopologyKind, build_network

logger = logging.getLogger(__name__)

NNWT_MAGIC = b"NNWT"
NNWT_VERSION = 1

PathLike = Union[str, Path]


def _dims(layer: Layer) -> Tuple[int, ...]:
    if isinstance(layer, Conv2D):
        return layer.in_c, layer.out_c, layer.k
    if isinstance(layer, TConv2D):
        return layer.in_c, layer.out_c
    if isinstance(layer, ConcatSkip):
        return (layer.source,)
    return ()


def _f32(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def encode_weights(net: Network, include_moments: bool = True) -> bytes:
    hyper = net.topology.hyperparameters()
    parts = [
        struct.pack("<4sHBH", NNWT_MAGIC, NNWT_VERSION, int(net.topology.kind), len(hyper)),
        struct.pack(f"<{len(hyper)}i", *hyper),
        struct.pack("<QI", net.step, len(net.layers)),
    ]
    for layer in net.layers:
        dims = _dims(layer)
        parts.append(struct.pack(f"<BB{len(dims)}I", int(layer.kind), len(dims), *dims))
        if isinstance(layer, (Conv2D, TConv2D)):
            parts.append(_f32(layer.weight.value))
            parts.append(_f32(layer.bias.value))
            parts.append(struct.pack("<B", int(include_moments)))
            if include_moments:
                for arr in (layer.weight.m, layer.weight.v, layer.bias.m, layer.bias.v):
                    parts.append(_f32(arr))
    return b"".join(parts)


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def unpack(self, fmt: str) -> tuple:
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.raw):
            raise FormatError("NNWT file truncated")
        out = struct.unpack_from(fmt, self.raw, self.pos)
        self.pos += size
        return out

    def floats(self, shape: Tuple[int, ...]) -> np.ndarray:
        count = int(np.prod(shape))
        if self.pos + 4 * count > len(self.raw):
            raise FormatError("NNWT payload truncated")
        arr = np.frombuffer(self.raw, dtype="<f4", count=count, offset=self.pos).reshape(shape)
        self.pos += 4 * count
        return arr


class StoredLayer:
    """One layer record as read from a file."""

    def __init__(self, kind: LayerKind, dims: Tuple[int, ...]):
        self.kind = kind
        self.dims = dims
        self.weight: Optional[np.ndarray] = None
        self.bias: Optional[np.ndarray] = None
        self.moments: Optional[List[np.ndarray]] = None

    def describe(self) -> str:
        return f"{self.kind.name.lower()}{list(self.dims)}"


class StoredWeights:
    def __init__(self, topology: Topology, step: int, layers: List[StoredLayer]):
        self.topology = topology
        self.step = step
        self.layers = layers


def _param_shapes(kind: LayerKind, dims: Tuple[int, ...]) -> Tuple[Tuple[int, ...], Tuple[int, ...]]:
    if kind == LayerKind.CONV:
        in_c, out_c, k = dims
        return (out_c, in_c, k, k), (out_c,)
    in_c, out_c = dims
    return (in_c, out_c, 2, 2), (out_c,)


def decode_weights(raw: bytes) -> StoredWeights:
    reader = _Reader(raw)
    magic, version, topo_tag, n_hyper = reader.unpack("<4sHBH")
    if magic != NNWT_MAGIC:
        raise FormatError(f"not an NNWT file (magic {magic!r})")
    if version != NNWT_VERSION:
        raise FormatError(f"unsupported NNWT version {version}")
    try:
        kind = TopologyKind(topo_tag)
    except ValueError:
        raise FormatError(f"unknown topology tag {topo_tag}")
    hyper = reader.unpack(f"<{n_hyper}i")
    try:
        topology = Topology.from_hyperparameters(kind, hyper)
    except (ValueError, IndexError):
        raise FormatError(f"bad {kind.name} hyperparameters {list(hyper)}")
    step, n_layers = reader.unpack("<QI")

    layers = []
    for _ in range(n_layers):
        tag, n_dims = reader.unpack("<BB")
        try:
            layer_kind = LayerKind(tag)
        except ValueError:
            raise FormatError(f"unknown layer tag {tag}")
        stored = StoredLayer(layer_kind, reader.unpack(f"<{n_dims}I"))
        if layer_kind in (LayerKind.CONV, LayerKind.TCONV):
            w_shape, b_shape = _param_shapes(layer_kind, stored.dims)
            stored.weight = reader.floats(w_shape)
            stored.bias = reader.floats(b_shape)
            (has_moments,) = reader.unpack("<B")
            if has_moments:
                stored.moments = [reader.floats(w_shape), reader.floats(w_shape),
                                  reader.floats(b_shape), reader.floats(b_shape)]
        layers.append(stored)
    if reader.pos != len(raw):
        raise FormatError(f"{len(raw) - reader.pos} trailing bytes after NNWT payload")
    return StoredWeights(topology, step, layers)


def topology_diff(net: Network, stored: StoredWeights) -> List[str]:
    """Human-readable per-layer differences; empty when the two fit."""
    diffs = []
    if len(net.layers) != len(stored.layers):
        diffs.append(f"layer count: file {len(stored.layers)}, network {len(net.layers)}")
    for i, (layer, rec) in enumerate(zip(net.layers, stored.layers)):
        if layer.kind != rec.kind or _dims(layer) != tuple(rec.dims):
            diffs.append(f"layer {i}: file {rec.describe()}, network {layer.kind.name.lower()}{list(_dims(layer))}")
    return diffs


def _apply(net: Network, stored: StoredWeights, load_moments: bool) -> Network:
    for layer, rec in zip(net.layers, stored.layers):
        if not isinstance(layer, (Conv2D, TConv2D)):
            continue
        dtype = layer.weight.value.dtype
        layer.weight.value[...] = rec.weight.astype(dtype)
        layer.bias.value[...] = rec.bias.astype(dtype)
        params = (layer.weight.m, layer.weight.v, layer.bias.m, layer.bias.v)
        if load_moments and rec.moments is not None:
            for dst, src in zip(params, rec.moments):
                dst[...] = src.astype(dtype)
        else:
            for dst in params:
                dst[...] = 0.0
    net.step = stored.step if load_moments else 0
    return net


def save_weights(net: Network, path: PathLike, include_moments: bool = True) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_weights(net, include_moments))
    logger.info(f"Saved {net.topology.kind.name} weights ({net.param_count()} parameters) to {path}")
    return path


def load_weights(path: PathLike, dtype=np.float32, load_moments: bool = True) -> Network:
    """Rebuild the stored network and fill in its parameters."""
    stored = decode_weights(Path(path).read_bytes())
    net = build_network(stored.topology, dtype=dtype)
    diffs = topology_diff(net, stored)
    if diffs:
        raise TopologyMismatchError(diffs)
    return _apply(net, stored, load_moments)


def warm_start(net: Network, path: PathLike, load_moments: bool = False) -> Network:
    """Load stored weights into an existing network of the same topology."""
    stored = decode_weights(Path(path).read_bytes())
    diffs = topology_diff(net, stored)
    if diffs:
        raise TopologyMismatchError(diffs)
    logger.info(f"Warm start from {path} (moments {'loaded' if load_moments else 'reset'})")
    return _apply(net, stored, load_moments)
