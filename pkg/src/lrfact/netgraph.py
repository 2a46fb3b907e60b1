"""Model representation and CPU forward pass, with parameter/FLOP accounting.

Tensors are row-major float32 ``numpy.ndarray``. Convolution weights use the
canonical layout ``[C_in, C_out, K1..Kd]``. Convolution is cross-correlation
(no kernel flip) with zero padding. Forward accumulates in float64 and stores
activations as float32; outputs are bitwise-deterministic for a fixed model
and batch.

FLOP convention: one multiply-add counts as 2 FLOPs; bias adds and activation
evaluations each count 1 FLOP per element.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ShapeError

__all__ = [
    "Linear",
    "Conv",
    "LED",
    "CED",
    "Activation",
    "Flatten",
    "Layer",
    "Model",
    "layer_output_shape",
    "forward",
    "count_params",
    "count_flops",
]


@dataclass(frozen=True)
class Linear:
    """Dense layer: y = W x + b, weight stored (out_features x in_features)."""

    name: str
    weight: np.ndarray
    bias: np.ndarray | None = None

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]


@dataclass(frozen=True)
class Conv:
    """Convolution layer; weight layout [C_in, C_out, K1..Kd], d in {1,2,3}."""

    name: str
    weight: np.ndarray
    bias: np.ndarray | None = None
    stride: tuple[int, ...] = ()
    padding: tuple[int, ...] = ()
    dilation: tuple[int, ...] = ()

    def __post_init__(self):
        d = self.weight.ndim - 2
        if d not in (1, 2, 3):
            raise ShapeError(f"conv weight must be 3-5 dimensional, got {self.weight.ndim}")
        object.__setattr__(self, "stride", tuple(self.stride) or (1,) * d)
        object.__setattr__(self, "padding", tuple(self.padding) or (0,) * d)
        object.__setattr__(self, "dilation", tuple(self.dilation) or (1,) * d)
        for attr in ("stride", "padding", "dilation"):
            if len(getattr(self, attr)) != d:
                raise ShapeError(f"{attr} must have {d} entries")

    @property
    def dims(self) -> int:
        return self.weight.ndim - 2

    @property
    def in_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def kernel(self) -> tuple[int, ...]:
        return tuple(self.weight.shape[2:])


@dataclass(frozen=True)
class LED:
    """Linear encoder-decoder: y = decoder (encoder x) + b.

    encoder is (r x n), decoder is (m x r); the product is never materialized
    in the forward pass.
    """

    name: str
    encoder: np.ndarray
    decoder: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self):
        if self.encoder.shape[0] != self.decoder.shape[1]:
            raise ShapeError(
                f"LED rank mismatch: encoder {self.encoder.shape}, decoder {self.decoder.shape}"
            )

    @property
    def rank(self) -> int:
        return self.encoder.shape[0]

    @property
    def out_features(self) -> int:
        return self.decoder.shape[0]

    @property
    def in_features(self) -> int:
        return self.encoder.shape[1]


@dataclass(frozen=True)
class CED:
    """Convolution encoder-decoder.

    encoder: [C_in, r, K1..Kd] conv with the original stride/padding/dilation,
    no bias. decoder: [r, C_out, 1..1] pointwise conv carrying the bias.
    """

    name: str
    encoder: np.ndarray
    decoder: np.ndarray
    bias: np.ndarray | None = None
    stride: tuple[int, ...] = ()
    padding: tuple[int, ...] = ()
    dilation: tuple[int, ...] = ()

    def __post_init__(self):
        d = self.encoder.ndim - 2
        if d not in (1, 2, 3):
            raise ShapeError("CED encoder must be a 1/2/3-D conv weight")
        if self.decoder.ndim != self.encoder.ndim:
            raise ShapeError("CED decoder arity must match encoder")
        if self.decoder.shape[0] != self.encoder.shape[1]:
            raise ShapeError("CED rank mismatch between encoder and decoder")
        if any(k != 1 for k in self.decoder.shape[2:]):
            raise ShapeError("CED decoder kernel dims must all be 1")
        object.__setattr__(self, "stride", tuple(self.stride) or (1,) * d)
        object.__setattr__(self, "padding", tuple(self.padding) or (0,) * d)
        object.__setattr__(self, "dilation", tuple(self.dilation) or (1,) * d)

    @property
    def dims(self) -> int:
        return self.encoder.ndim - 2

    @property
    def rank(self) -> int:
        return self.encoder.shape[1]

    @property
    def in_channels(self) -> int:
        return self.encoder.shape[0]

    @property
    def out_channels(self) -> int:
        return self.decoder.shape[1]

    @property
    def kernel(self) -> tuple[int, ...]:
        return tuple(self.encoder.shape[2:])


@dataclass(frozen=True)
class Activation:
    name: str
    fn: str = "relu"

    def __post_init__(self):
        if self.fn != "relu":
            raise ValueError(f"unsupported activation {self.fn!r}")


@dataclass(frozen=True)
class Flatten:
    name: str


Layer = Linear | Conv | LED | CED | Activation | Flatten


@dataclass(frozen=True)
class Model:
    """Named, ordered sequence of layers with a declared input shape (no batch)."""

    name: str
    input_shape: tuple[int, ...]
    layers: tuple[Layer, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise ValueError("layer names must be unique")
        # Validate that consecutive layer shapes compose.
        shape = self.input_shape
        for layer in self.layers:
            shape = layer_output_shape(layer, shape)

    def with_layers(self, layers) -> "Model":
        return replace(self, layers=tuple(layers))

    def output_shape(self) -> tuple[int, ...]:
        shape = self.input_shape
        for layer in self.layers:
            shape = layer_output_shape(layer, shape)
        return shape


def _conv_out_spatial(in_spatial, kernel, stride, padding, dilation, name):
    out = []
    for L, k, s, p, d in zip(in_spatial, kernel, stride, padding, dilation):
        span = d * (k - 1) + 1
        o = (L + 2 * p - span) // s + 1
        if L + 2 * p < span or o < 1:
            raise ShapeError(
                f"layer {name!r}: spatial dim {L} too small for kernel {k} "
                f"(dilation {d}, padding {p})"
            )
        out.append(o)
    return tuple(out)


def layer_output_shape(layer: Layer, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    """Output shape (excluding batch) of one layer for a given input shape."""
    in_shape = tuple(in_shape)
    if isinstance(layer, Linear):
        if in_shape != (layer.in_features,):
            raise ShapeError(
                f"layer {layer.name!r}: expected input shape ({layer.in_features},), got {in_shape}"
            )
        return (layer.out_features,)
    if isinstance(layer, LED):
        if in_shape != (layer.in_features,):
            raise ShapeError(
                f"layer {layer.name!r}: expected input shape ({layer.in_features},), got {in_shape}"
            )
        return (layer.out_features,)
    if isinstance(layer, (Conv, CED)):
        if len(in_shape) != layer.dims + 1 or in_shape[0] != layer.in_channels:
            raise ShapeError(
                f"layer {layer.name!r}: expected input [C={layer.in_channels}, "
                f"{layer.dims} spatial dims], got {in_shape}"
            )
        spatial = _conv_out_spatial(
            in_shape[1:], layer.kernel, layer.stride, layer.padding, layer.dilation, layer.name
        )
        return (layer.out_channels,) + spatial
    if isinstance(layer, Activation):
        return in_shape
    if isinstance(layer, Flatten):
        return (int(np.prod(in_shape)),)
    raise TypeError(f"unknown layer type {type(layer)!r}")


def _conv_forward(x64, weight, stride, padding, dilation, name):
    """Cross-correlation of x64 (N, C_in, spatial...) with weight [C_in, C_out, K...]."""
    d = weight.ndim - 2
    kernel = weight.shape[2:]
    in_spatial = x64.shape[2:]
    out_spatial = _conv_out_spatial(in_spatial, kernel, stride, padding, dilation, name)

    pad_width = [(0, 0), (0, 0)] + [(p, p) for p in padding]
    xp = np.pad(x64, pad_width) if any(padding) else x64

    n, c_in = x64.shape[0], x64.shape[1]
    c_out = weight.shape[1]
    y = np.zeros((n, c_out) + out_spatial, dtype=np.float64)
    w64 = weight.astype(np.float64)
    # One strided slice + tensordot per kernel offset; fixed iteration order
    # keeps the reduction deterministic.
    for kappa in np.ndindex(*kernel):
        slices = tuple(
            slice(k * dil, k * dil + (o - 1) * s + 1, s)
            for k, dil, o, s in zip(kappa, dilation, out_spatial, stride)
        )
        patch = xp[(slice(None), slice(None)) + slices]  # (N, C_in, out_spatial...)
        wk = w64[(slice(None), slice(None)) + kappa]  # (C_in, C_out)
        y += np.moveaxis(np.tensordot(patch, wk, axes=([1], [0])), -1, 1)
    return y


def _as_batch(batch, input_shape):
    b = np.asarray(batch, dtype=np.float32)
    if b.ndim != len(input_shape) + 1 or tuple(b.shape[1:]) != tuple(input_shape):
        raise ShapeError(
            f"batch shape {b.shape} does not match [N, {', '.join(map(str, input_shape))}]"
        )
    return b


def forward(model: Model, batch: np.ndarray) -> np.ndarray:
    """Run the batch through the model, returning a float32 output tensor."""
    x = _as_batch(batch, model.input_shape)
    shape = model.input_shape
    for layer in model.layers:
        shape = layer_output_shape(layer, shape)  # raises naming the layer
        x64 = x.astype(np.float64)
        if isinstance(layer, Linear):
            y = x64 @ layer.weight.astype(np.float64).T
            if layer.bias is not None:
                y += layer.bias.astype(np.float64)
        elif isinstance(layer, LED):
            y = (x64 @ layer.encoder.astype(np.float64).T) @ layer.decoder.astype(np.float64).T
            if layer.bias is not None:
                y += layer.bias.astype(np.float64)
        elif isinstance(layer, Conv):
            y = _conv_forward(x64, layer.weight, layer.stride, layer.padding, layer.dilation, layer.name)
            if layer.bias is not None:
                y += layer.bias.astype(np.float64).reshape((1, -1) + (1,) * layer.dims)
        elif isinstance(layer, CED):
            h = _conv_forward(x64, layer.encoder, layer.stride, layer.padding, layer.dilation, layer.name)
            dec = layer.decoder.reshape(layer.decoder.shape[0], layer.decoder.shape[1])
            y = np.moveaxis(np.tensordot(h, dec.astype(np.float64), axes=([1], [0])), -1, 1)
            if layer.bias is not None:
                y += layer.bias.astype(np.float64).reshape((1, -1) + (1,) * layer.dims)
        elif isinstance(layer, Activation):
            y = np.maximum(x64, 0.0)
        elif isinstance(layer, Flatten):
            y = x64.reshape(x64.shape[0], -1)
        else:
            raise TypeError(f"unknown layer type {type(layer)!r}")
        x = y.astype(np.float32)
    return x


def _layer_params(layer: Layer) -> int:
    if isinstance(layer, Linear):
        n = layer.weight.size
        return n + (layer.bias.size if layer.bias is not None else 0)
    if isinstance(layer, LED):
        n = layer.encoder.size + layer.decoder.size
        return n + (layer.bias.size if layer.bias is not None else 0)
    if isinstance(layer, Conv):
        n = layer.weight.size
        return n + (layer.bias.size if layer.bias is not None else 0)
    if isinstance(layer, CED):
        n = layer.encoder.size + layer.decoder.size
        return n + (layer.bias.size if layer.bias is not None else 0)
    return 0


def count_params(model: Model):
    """Per-layer and total parameter counts, in layer order."""
    per_layer = {l.name: _layer_params(l) for l in model.layers}
    return per_layer, sum(per_layer.values())


def _layer_flops(layer: Layer, in_shape, batch_size: int) -> int:
    out_shape = layer_output_shape(layer, in_shape)
    if isinstance(layer, Linear):
        f = 2 * layer.out_features * layer.in_features
        if layer.bias is not None:
            f += layer.out_features
    elif isinstance(layer, LED):
        f = 2 * layer.rank * (layer.out_features + layer.in_features)
        if layer.bias is not None:
            f += layer.out_features
    elif isinstance(layer, Conv):
        out_spatial = int(np.prod(out_shape[1:]))
        f = 2 * layer.out_channels * layer.in_channels * int(np.prod(layer.kernel)) * out_spatial
        if layer.bias is not None:
            f += layer.out_channels * out_spatial
    elif isinstance(layer, CED):
        out_spatial = int(np.prod(out_shape[1:]))
        enc = 2 * layer.rank * layer.in_channels * int(np.prod(layer.kernel)) * out_spatial
        dec = 2 * layer.out_channels * layer.rank * out_spatial
        f = enc + dec
        if layer.bias is not None:
            f += layer.out_channels * out_spatial
    elif isinstance(layer, Activation):
        f = int(np.prod(out_shape))
    else:
        f = 0
    return f * batch_size


def count_flops(model: Model, batch_size: int = 1):
    """Per-layer and total forward FLOPs for the declared input shape."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    per_layer = {}
    shape = model.input_shape
    for layer in model.layers:
        per_layer[layer.name] = _layer_flops(layer, shape, batch_size)
        shape = layer_output_shape(layer, shape)
    return per_layer, sum(per_layer.values())
