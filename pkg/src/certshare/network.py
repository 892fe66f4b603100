"""Feed-forward ReLU networks and propagation of points, boxes and zonotopes.

A network is normalised into *blocks*: one affine map optionally followed by
a ReLU.  Layer index ``k`` counts blocks, so ``k = 0`` is the input and
``k = L`` the logits; ``N_{1:k}`` is ``forward_*(..., 0, k)``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .relax import (
    Box,
    Zonotope,
    affine_box,
    affine_zono,
    alpha_box,
    relu_box,
    relu_zono,
)


@dataclass(frozen=True, eq=False)
class Dense:
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ValueError(f"dense weights {w.shape} and bias {b.shape} are inconsistent")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class Flatten:
    from_shape: tuple = ()


@dataclass(frozen=True, eq=False)
class Conv2D:
    """2-d convolution; kernel is ``(out_ch, in_ch, kh, kw)``.

    Activations are flattened channels-last, i.e. in ``(h, w, c)`` order.
    """

    kernel: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        k = np.array(self.kernel, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64)
        if k.ndim != 4 or b.shape != (k.shape[0],):
            raise ValueError(f"conv kernel {k.shape} and bias {b.shape} are inconsistent")
        object.__setattr__(self, "kernel", k)
        object.__setattr__(self, "bias", b)

    def output_shape(self, input_shape):
        c, h, w = input_shape
        out_ch, in_ch, kh, kw = self.kernel.shape
        if in_ch != c:
            raise ValueError(f"conv expects {in_ch} input channels, got {c}")
        oh = (h + 2 * self.padding - kh) // self.stride + 1
        ow = (w + 2 * self.padding - kw) // self.stride + 1
        if oh <= 0 or ow <= 0:
            raise ValueError(f"conv kernel {kh}x{kw} does not fit input {h}x{w}")
        return (out_ch, oh, ow)


Layer = Union[Dense, ReLU, Flatten, Conv2D]


def conv_to_dense(layer: Conv2D, input_shape) -> Dense:
    """Materialise a convolution as a dense layer over channels-last vectors."""
    c, h, w = input_shape
    out_ch, oh, ow = layer.output_shape(input_shape)
    _, _, kh, kw = layer.kernel.shape
    s, p = layer.stride, layer.padding

    W = np.zeros((oh * ow * out_ch, h * w * c))
    bias = np.tile(layer.bias, oh * ow)
    for i in range(oh):
        for j in range(ow):
            rows = (i * ow + j) * out_ch + np.arange(out_ch)
            for di in range(kh):
                r = i * s + di - p
                if r < 0 or r >= h:
                    continue
                for dj in range(kw):
                    q = j * s + dj - p
                    if q < 0 or q >= w:
                        continue
                    cols = (r * w + q) * c + np.arange(c)
                    W[np.ix_(rows, cols)] += layer.kernel[:, :, di, dj]
    return Dense(W, bias)


@dataclass(frozen=True, eq=False)
class Block:
    weights: np.ndarray
    bias: np.ndarray
    relu: bool


@dataclass(eq=False)
class Network:
    layers: list
    input_shape: tuple
    num_classes: int
    blocks: list = field(init=False, repr=False)

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        self.blocks = self._build_blocks()
        if self.blocks[-1].relu:
            raise ValueError("the output layer must not be followed by a ReLU")
        if self.blocks[-1].weights.shape[0] != self.num_classes:
            raise ValueError(
                f"output dimension {self.blocks[-1].weights.shape[0]} != num_classes {self.num_classes}"
            )

    def _build_blocks(self) -> list:
        shape = self.input_shape
        dim = int(np.prod(shape))
        blocks: list = []
        for idx, layer in enumerate(self.layers):
            if isinstance(layer, Flatten):
                continue
            if isinstance(layer, ReLU):
                if not blocks or blocks[-1].relu:
                    raise ValueError(f"layer {idx}: ReLU must follow an affine layer")
                last = blocks[-1]
                blocks[-1] = Block(last.weights, last.bias, True)
                continue
            if isinstance(layer, Conv2D):
                if len(shape) != 3:
                    raise ValueError(f"layer {idx}: conv needs a (c, h, w) input, got {shape}")
                dense = conv_to_dense(layer, shape)
                shape = layer.output_shape(shape)
            elif isinstance(layer, Dense):
                dense = layer
                shape = (layer.weights.shape[0],)
            else:
                raise ValueError(f"layer {idx}: unsupported layer {type(layer).__name__}")
            if dense.weights.shape[1] != dim:
                raise ValueError(
                    f"layer {idx}: expects input dimension {dense.weights.shape[1]}, got {dim}"
                )
            dim = dense.weights.shape[0]
            blocks.append(Block(dense.weights, dense.bias, False))
        if not blocks:
            raise ValueError("network has no affine layers")
        return blocks

    @property
    def num_layers(self) -> int:
        """Number of blocks ``L``; layer ``L`` is the logit layer."""
        return len(self.blocks)

    @property
    def input_dim(self) -> int:
        return self.blocks[0].weights.shape[1]

    def dim_at(self, k: int) -> int:
        self._check_index(k)
        return self.input_dim if k == 0 else self.blocks[k - 1].weights.shape[0]

    def _check_index(self, k: int) -> None:
        if not 0 <= k <= self.num_layers:
            raise IndexError(f"layer index {k} outside [0, {self.num_layers}]")

    def _range(self, dim: int, from_k: int, to_k: Optional[int]) -> range:
        to_k = self.num_layers if to_k is None else to_k
        self._check_index(from_k)
        self._check_index(to_k)
        if from_k > to_k:
            raise IndexError(f"from_k={from_k} is after to_k={to_k}")
        if dim != self.dim_at(from_k):
            raise ValueError(f"input has dimension {dim}, layer {from_k} has {self.dim_at(from_k)}")
        return range(from_k, to_k)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps([list(self.input_shape), self.num_classes]).encode())
        for block in self.blocks:
            h.update(np.ascontiguousarray(block.weights).tobytes())
            h.update(np.ascontiguousarray(block.bias).tobytes())
            h.update(b"R" if block.relu else b"-")
        return h.hexdigest()


def forward_point(net: Network, x, from_k: int = 0, to_k: Optional[int] = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    for i in net._range(x.shape[-1], from_k, to_k):
        blk = net.blocks[i]
        x = x @ blk.weights.T + blk.bias
        if blk.relu:
            x = np.maximum(x, 0.0)
    return x


def propagate_box(net: Network, b: Box, from_k: int = 0, to_k: Optional[int] = None) -> Box:
    for i in net._range(b.dim, from_k, to_k):
        blk = net.blocks[i]
        b = affine_box(b, blk.weights, blk.bias)
        if blk.relu:
            b = relu_box(b)
    return b


ReluTransformer = Callable[..., Zonotope]


def propagate_zono(
    net: Network,
    z: Zonotope,
    from_k: int = 0,
    to_k: Optional[int] = None,
    relu: ReluTransformer = relu_zono,
) -> Zonotope:
    for i in net._range(z.dim, from_k, to_k):
        blk = net.blocks[i]
        z = affine_zono(z, blk.weights, blk.bias)
        if blk.relu:
            z = relu(z)
    return z


def check_postcondition(out: Union[Box, Zonotope], label: int, pairwise: bool = False) -> bool:
    """True iff ``label`` provably has the strictly largest logit.

    With ``pairwise`` and a zonotope, the differences ``n_i - n_label`` are
    bounded inside the zonotope instead of comparing per-class intervals.
    """
    if not 0 <= label < out.dim:
        raise IndexError(f"label {label} outside [0, {out.dim})")
    if out.dim == 1:
        return True
    if pairwise and isinstance(out, Zonotope):
        diff_c = out.center - out.center[label]
        diff_g = out.generators - out.generators[label]
        upper = diff_c + np.abs(diff_g).sum(axis=1)
        upper[label] = -np.inf
        return bool(np.all(upper < 0))
    box = alpha_box(out) if isinstance(out, Zonotope) else out
    others = np.delete(box.upper, label)
    return bool(box.lower[label] > others.max())


def classify(net: Network, x) -> int:
    return int(np.argmax(forward_point(net, x)))


def network_from_arrays(weights: Sequence, biases: Sequence, input_shape=None) -> Network:
    """Dense ReLU network with a ReLU after every layer but the last."""
    layers: list = []
    for i, (w, b) in enumerate(zip(weights, biases)):
        layers.append(Dense(w, b))
        if i < len(weights) - 1:
            layers.append(ReLU())
    w0 = np.asarray(weights[0])
    shape = input_shape if input_shape is not None else (w0.shape[1],)
    return Network(layers, shape, np.asarray(weights[-1]).shape[0])
