"""
Sequential networks with skip routing, and the VDSR / U-Net builders.

Activation 0 is the network input; layer i turns activation i into
activation i + 1. Backward walks the layers in reverse, keeping one
gradient accumulator per activation index so skip sources collect the
gradient of every consumer.
"""

import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, List, Sequence, Tuple

import numpy as np

from app.core.errors import InvalidRangeError, ShapeMismatchError
from app.core.seeds import derive_seed
from app.neural.layers import (
    ConcatSkip,
    Conv2D,
    Layer,
    MaxPool2,
    Param,
    ReLU,
    ResidualAddInput,
    TConv2D,
    he_init,
)

logger = logging.getLogger(__name__)

# Full-scale defaults
VDSR_DEPTH = 20
VDSR_WIDTH = 64
UNET_WIDTHS = (32, 64, 128)
CONVS_PER_BLOCK = 3


class TopologyKind(IntEnum):
    VDSR = 1
    UNET = 2


@dataclass(frozen=True)
class Topology:
    """Builder hyperparameters; enough to rebuild the layer list."""
    kind: TopologyKind
    depth: int = 0
    width: int = 0
    widths: Tuple[int, ...] = ()
    residual: bool = True

    def hyperparameters(self) -> List[int]:
        if self.kind == TopologyKind.VDSR:
            return [self.depth, self.width, int(self.residual)]
        return [len(self.widths), *self.widths, int(self.residual)]

    @classmethod
    def from_hyperparameters(cls, kind: TopologyKind, values: Sequence[int]) -> "Topology":
        if kind == TopologyKind.VDSR:
            depth, width, residual = values
            return cls(kind, depth=depth, width=width, residual=bool(residual))
        count = values[0]
        return cls(kind, widths=tuple(values[1:1 + count]), residual=bool(values[1 + count]))

    @property
    def size_multiple(self) -> int:
        """Input height and width must be multiples of this."""
        if self.kind == TopologyKind.UNET:
            return 2 ** (len(self.widths) - 1)
        return 1


@dataclass
class Network:
    """Ordered layers plus the topology they were built from."""
    layers: List[Layer]
    topology: Topology
    dtype: type = np.float32
    # Adam step count, persisted with the weights
    step: int = 0
    _acts: List[np.ndarray] = field(default_factory=list, repr=False)

    def parameters(self) -> List[Param]:
        return [p for layer in self.layers for p in layer.params().values()]

    def param_count(self) -> int:
        return int(sum(p.value.size for p in self.parameters()))

    def zero_grads(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def check_input(self, height: int, width: int) -> None:
        multiple = self.topology.size_multiple
        if height % multiple or width % multiple:
            raise ShapeMismatchError(
                f"{self.topology.kind.name} input dims must be divisible by {multiple}, "
                f"got {height}x{width}"
            )

    def forward(self, x: np.ndarray) -> np.ndarray:
        """(N, 1, H, W) -> (N, 1, H, W). Activations are kept for backward."""
        if x.ndim != 4:
            raise ShapeMismatchError(f"network input must be (N, C, H, W), got {x.shape}")
        self.check_input(x.shape[2], x.shape[3])
        acts = [np.asarray(x, dtype=self.dtype)]
        for layer in self.layers:
            extra = acts[layer.source] if layer.source is not None else None
            acts.append(layer.forward(acts[-1], extra))
        self._acts = acts
        return acts[-1]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients; returns the gradient for the input."""
        if not self._acts:
            raise RuntimeError("backward called before forward")
        grads: Dict[int, np.ndarray] = {len(self.layers): np.asarray(grad_out, dtype=self.dtype)}
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            g = grads.pop(i + 1)
            g_in, g_extra = layer.backward(g)
            grads[i] = grads[i] + g_in if i in grads else g_in
            if g_extra is not None:
                src = layer.source
                grads[src] = grads[src] + g_extra if src in grads else g_extra
        return grads[0]

    def release(self) -> None:
        """Drop cached activations (inference-only callers)."""
        self._acts = []
        for layer in self.layers:
            layer.clear_cache()

    def output_conv(self) -> Conv2D:
        convs = [layer for layer in self.layers if isinstance(layer, Conv2D)]
        return convs[-1]

    def zero_output_layer(self) -> "Network":
        """Zero the last conv; with a global residual the network becomes the identity."""
        conv = self.output_conv()
        conv.weight.value[...] = 0.0
        conv.bias.value[...] = 0.0
        return self

    def describe(self) -> List[str]:
        return [f"{i:3d} {layer.describe()}" for i, layer in enumerate(self.layers)]


def _initialize(layers: List[Layer], seed: int) -> None:
    for i, layer in enumerate(layers):
        he_init(layer, derive_seed(seed, "he", i))


def build_vdsr(depth: int = VDSR_DEPTH, width: int = VDSR_WIDTH, residual: bool = True,
               seed: int = 0, dtype=np.float32) -> Network:
    """depth 3x3 convs (1 -> width -> ... -> 1), ReLU after all but the last, global residual."""
    if depth < 2:
        raise InvalidRangeError(f"VDSR depth must be >= 2, got {depth}")
    if width < 1:
        raise InvalidRangeError(f"VDSR width must be >= 1, got {width}")
    layers: List[Layer] = []
    for i in range(depth):
        in_c = 1 if i == 0 else width
        out_c = 1 if i == depth - 1 else width
        layers.append(Conv2D(in_c, out_c, 3, dtype=dtype))
        if i < depth - 1:
            layers.append(ReLU())
    if residual:
        layers.append(ResidualAddInput())
    _initialize(layers, seed)
    topo = Topology(TopologyKind.VDSR, depth=depth, width=width, residual=residual)
    logger.debug(f"Built VDSR depth={depth} width={width} residual={residual}")
    return Network(layers, topo, dtype=dtype)


def build_unet(widths: Sequence[int] = UNET_WIDTHS, residual: bool = True,
               seed: int = 0, dtype=np.float32) -> Network:
    """
    Encoder/decoder with skip concatenation.

    Encoder block b runs three conv+ReLU at widths[b], with a 2x2 max pool
    between blocks. The first decoder block runs three conv+ReLU at the
    deepest width on the deepest encoder output. Every further decoder
    block upsamples with a 2x2 transposed conv to the next shallower width,
    concatenates that encoder block's output, and runs three conv+ReLU.
    A final 1x1 conv maps to one channel; the global residual adds the
    input.
    """
    widths = tuple(int(w) for w in widths)
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise InvalidRangeError(f"U-Net needs at least two positive block widths, got {widths}")
    layers: List[Layer] = []
    skips: List[int] = []
    channels = 1

    def block(width: int) -> None:
        nonlocal channels
        for _ in range(CONVS_PER_BLOCK):
            layers.append(Conv2D(channels, width, 3, dtype=dtype))
            layers.append(ReLU())
            channels = width

    for b, width in enumerate(widths):
        block(width)
        if b < len(widths) - 1:
            skips.append(len(layers))  # activation index of this block's output
            layers.append(MaxPool2())

    block(widths[-1])
    for b in range(len(widths) - 2, -1, -1):
        layers.append(TConv2D(channels, widths[b], dtype=dtype))
        channels = widths[b]
        layers.append(ConcatSkip(skips[b]))
        channels += widths[b]
        block(widths[b])

    layers.append(Conv2D(channels, 1, 1, dtype=dtype))
    if residual:
        layers.append(ResidualAddInput())
    _initialize(layers, seed)
    topo = Topology(TopologyKind.UNET, widths=widths, residual=residual)
    logger.debug(f"Built U-Net widths={widths} residual={residual}")
    return Network(layers, topo, dtype=dtype)


def build_network(topology: Topology, seed: int = 0, dtype=np.float32) -> Network:
    """Rebuild a network from its topology record."""
    if topology.kind == TopologyKind.VDSR:
        return build_vdsr(topology.depth, topology.width, topology.residual, seed=seed, dtype=dtype)
    return build_unet(topology.widths, topology.residual, seed=seed, dtype=dtype)


def unet_param_count(widths: Sequence[int] = UNET_WIDTHS) -> int:
    """Closed-form parameter count of build_unet(widths)."""

    def conv(k: int, i: int, o: int) -> int:
        return k * k * i * o + o

    total, channels = 0, 1
    for w in widths:
        total += conv(3, channels, w) + 2 * conv(3, w, w)
        channels = w
    total += CONVS_PER_BLOCK * conv(3, widths[-1], widths[-1])
    for b in range(len(widths) - 2, -1, -1):
        w = widths[b]
        total += conv(2, channels, w)  # transposed conv has the same count
        total += conv(3, 2 * w, w) + 2 * conv(3, w, w)
        channels = w
    return total + conv(1, channels, 1)


def predict_array(net: Network, x: np.ndarray) -> np.ndarray:
    """Forward pass on a (H, W) array without keeping activations."""
    out = net.forward(np.asarray(x)[None, None])[0, 0]
    net.release()
    return out

