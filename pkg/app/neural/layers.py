"""
Network layers with forward and backward passes.

Tensors are numpy arrays shaped (batch, channels, height, width). A layer
maps the previous activation to the next one; the two routing layers
(ConcatSkip and ResidualAddInput) also read an earlier activation, which
the Network hands them by index. backward() returns the gradient for its
input activation and, for routing layers, the gradient for the extra
source as well.
"""

import logging
from dataclasses import dataclass
from enum import IntEnum
from typing import Dict, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from app.core.errors import ShapeMismatchError

logger = logging.getLogger(__name__)


class LayerKind(IntEnum):
    """Stable tags, also used by the NNWT weight format."""
    CONV = 1
    TCONV = 2
    MAXPOOL = 3
    RELU = 4
    CONCAT = 5
    RESIDUAL = 6


@dataclass
class Param:
    """A trainable array with its gradient and Adam moments."""
    value: np.ndarray
    grad: Optional[np.ndarray] = None
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.m is None:
            self.m = np.zeros_like(self.value)
        if self.v is None:
            self.v = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def he_std(fan_in: int) -> float:
    return float(np.sqrt(2.0 / fan_in))


class Layer:
    kind: LayerKind
    # Activation index of an extra input, or None
    source: Optional[int] = None

    def params(self) -> Dict[str, Param]:
        return {}

    def forward(self, x: np.ndarray, extra: Optional[np.ndarray] = None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        raise NotImplementedError

    def out_channels(self, in_channels: int, source_channels: int = 0) -> int:
        return in_channels

    def describe(self) -> str:
        return self.kind.name.lower()

    def clear_cache(self) -> None:
        for name in list(vars(self)):
            if name.startswith("_cache"):
                setattr(self, name, None)


def _check_channels(x: np.ndarray, expected: int, what: str) -> None:
    if x.ndim != 4 or x.shape[1] != expected:
        raise ShapeMismatchError(f"{what} expects {expected} input channels, got shape {x.shape}")


class Conv2D(Layer):
    """k x k convolution, stride 1, zero 'same' padding. weight: (out_c, in_c, k, k)."""
    kind = LayerKind.CONV

    def __init__(self, in_c: int, out_c: int, k: int = 3, dtype=np.float32):
        if k % 2 == 0:
            raise ShapeMismatchError(f"same-padded convolution needs an odd kernel, got {k}")
        self.in_c, self.out_c, self.k = in_c, out_c, k
        self.weight = Param(np.zeros((out_c, in_c, k, k), dtype=dtype))
        self.bias = Param(np.zeros(out_c, dtype=dtype))
        self._cache_windows = None

    def params(self) -> Dict[str, Param]:
        return {"weight": self.weight, "bias": self.bias}

    @property
    def fan_in(self) -> int:
        return self.k * self.k * self.in_c

    def _windows(self, x: np.ndarray) -> np.ndarray:
        p = self.k // 2
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        return sliding_window_view(xp, (self.k, self.k), axis=(2, 3))

    def forward(self, x: np.ndarray, extra: Optional[np.ndarray] = None) -> np.ndarray:
        _check_channels(x, self.in_c, "conv")
        win = self._windows(x)  # (N, C, H, W, k, k)
        out = np.tensordot(win, self.weight.value, axes=([1, 4, 5], [1, 2, 3]))  # (N, H, W, O)
        self._cache_windows = win
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2)) + self.bias.value[None, :, None, None]

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        win = self._cache_windows
        self.weight.grad += np.tensordot(grad, win, axes=([0, 2, 3], [0, 2, 3]))
        self.bias.grad += grad.sum(axis=(0, 2, 3))
        flipped = self.weight.value[:, :, ::-1, ::-1]
        gwin = self._windows(grad)  # (N, O, H, W, k, k)
        dx = np.tensordot(gwin, flipped, axes=([1, 4, 5], [0, 2, 3]))  # (N, H, W, C)
        return np.ascontiguousarray(dx.transpose(0, 3, 1, 2)), None

    def out_channels(self, in_channels: int, source_channels: int = 0) -> int:
        return self.out_c

    def describe(self) -> str:
        return f"conv{self.k}x{self.k} {self.in_c}->{self.out_c}"


class TConv2D(Layer):
    """2 x 2 transposed convolution, stride 2 (exact doubling). weight: (in_c, out_c, 2, 2)."""
    kind = LayerKind.TCONV
    k = 2

    def __init__(self, in_c: int, out_c: int, dtype=np.float32):
        self.in_c, self.out_c = in_c, out_c
        self.weight = Param(np.zeros((in_c, out_c, 2, 2), dtype=dtype))
        self.bias = Param(np.zeros(out_c, dtype=dtype))
        self._cache_input = None

    def params(self) -> Dict[str, Param]:
        return {"weight": self.weight, "bias": self.bias}

    @property
    def fan_in(self) -> int:
        return self.k * self.k * self.in_c

    def forward(self, x: np.ndarray, extra: Optional[np.ndarray] = None) -> np.ndarray:
        _check_channels(x, self.in_c, "transposed conv")
        n, _, h, w = x.shape
        self._cache_input = x
        out = np.einsum("ncij,coab->noiajb", x, self.weight.value)
        out = out.reshape(n, self.out_c, 2 * h, 2 * w)
        return out + self.bias.value[None, :, None, None]

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        x = self._cache_input
        n, _, h, w = x.shape
        g6 = grad.reshape(n, self.out_c, h, 2, w, 2)
        self.weight.grad += np.einsum("ncij,noiajb->coab", x, g6)
        self.bias.grad += grad.sum(axis=(0, 2, 3))
        return np.einsum("noiajb,coab->ncij", g6, self.weight.value), None

    def out_channels(self, in_channels: int, source_channels: int = 0) -> int:
        return self.out_c

    def describe(self) -> str:
        return f"tconv2x2 {self.in_c}->{self.out_c}"


class MaxPool2(Layer):
    """2 x 2 max pool, stride 2; ties go to the first (top-left) element."""
    kind = LayerKind.MAXPOOL

    def __init__(self):
        self._cache_argmax = None
        self._cache_shape = None

    def forward(self, x: np.ndarray, extra: Optional[np.ndarray] = None) -> np.ndarray:
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeMismatchError(f"max pooling needs even spatial dims, got {h}x{w}")
        blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
        idx = np.argmax(blocks, axis=-1)
        self._cache_argmax = idx
        self._cache_shape = x.shape
        return np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        n, c, h, w = self._cache_shape
        blocks = np.zeros((n, c, h // 2, w // 2, 4), dtype=grad.dtype)
        np.put_along_axis(blocks, self._cache_argmax[..., None], grad[..., None], axis=-1)
        dx = blocks.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return dx, None


class ReLU(Layer):
    kind = LayerKind.RELU

    def __init__(self):
        self._cache_mask = None

    def forward(self, x: np.ndarray, extra: Optional[np.ndarray] = None) -> np.ndarray:
        self._cache_mask = x > 0
        return np.where(self._cache_mask, x, 0.0).astype(x.dtype, copy=False)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        return grad * self._cache_mask, None


class ConcatSkip(Layer):
    """Channel concatenation of the current activation with activation `source`."""
    kind = LayerKind.CONCAT

    def __init__(self, source: int):
        self.source = source
        self._cache_split = None

    def forward(self, x: np.ndarray, extra: Optional[np.ndarray] = None) -> np.ndarray:
        if extra is None or extra.shape[0] != x.shape[0] or extra.shape[2:] != x.shape[2:]:
            got = None if extra is None else extra.shape
            raise ShapeMismatchError(f"skip source {self.source} shape {got} does not match {x.shape}")
        self._cache_split = x.shape[1]
        return np.concatenate([x, extra], axis=1)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        split = self._cache_split
        return grad[:, :split], grad[:, split:]

    def out_channels(self, in_channels: int, source_channels: int = 0) -> int:
        return in_channels + source_channels

    def describe(self) -> str:
        return f"concat(skip from {self.source})"


class ResidualAddInput(Layer):
    """Adds the network input (activation 0) to the current activation."""
    kind = LayerKind.RESIDUAL

    def __init__(self):
        self.source = 0

    def forward(self, x: np.ndarray, extra: Optional[np.ndarray] = None) -> np.ndarray:
        if extra is None or extra.shape != x.shape:
            got = None if extra is None else extra.shape
            raise ShapeMismatchError(f"residual add needs matching shapes, got {x.shape} and {got}")
        return x + extra

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        return grad, grad


def he_init(layer: Layer, seed: int) -> Layer:
    """Zero-mean Gaussian weights with std sqrt(2 / (k^2 in_c)); biases zero."""
    if not isinstance(layer, (Conv2D, TConv2D)):
        return layer
    rng = np.random.default_rng(seed)
    w = layer.weight.value
    w[...] = rng.normal(0.0, he_std(layer.fan_in), size=w.shape).astype(w.dtype)
    layer.bias.value[...] = 0.0
    return layer
