"""Layer descriptors, parameter initialisation and the functional forward."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import tensor as T
from .conv import conv, conv_output_size, conv_transpose, transposed_output_size
from .tensor import Tensor

KINDS = ("conv3d", "transposed_conv3d", "conv2d", "linear", "relu", "group_norm", "softmax")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 1
    stride: int = 1
    padding: int = 0
    groups: int = 4
    bias: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind in ("conv3d", "transposed_conv3d", "conv2d", "linear"):
            if self.in_channels < 1 or self.out_channels < 1:
                raise ValueError(f"{self.kind}: channel counts must be positive")
            if self.kernel < 1 or self.stride < 1 or self.padding < 0:
                raise ValueError(f"{self.kind}: bad kernel/stride/padding")
        if self.kind == "group_norm":
            if self.in_channels < 1 or self.in_channels % self.groups:
                raise ValueError(f"group_norm: {self.in_channels} channels not divisible into {self.groups} groups")

    @property
    def spatial_dims(self) -> int:
        return {"conv3d": 3, "transposed_conv3d": 3, "conv2d": 2}.get(self.kind, 0)

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        nd = self.spatial_dims
        k, s, p = (self.kernel,) * nd, (self.stride,) * nd, (self.padding,) * nd
        if self.kind in ("conv3d", "conv2d"):
            return (input_shape[0], self.out_channels) + conv_output_size(input_shape[2:], k, s, p)
        if self.kind == "transposed_conv3d":
            return (input_shape[0], self.out_channels) + transposed_output_size(input_shape[2:], k, s, p)
        if self.kind == "linear":
            return input_shape[:-1] + (self.out_channels,)
        return tuple(input_shape)


def conv3d(cin, cout, kernel, stride=1, padding=0) -> LayerSpec:
    return LayerSpec("conv3d", cin, cout, kernel, stride, padding)


def upconv3d(cin, cout, kernel, stride=1, padding=0) -> LayerSpec:
    return LayerSpec("transposed_conv3d", cin, cout, kernel, stride, padding)


def conv2d(cin, cout, kernel, stride=1, padding=0) -> LayerSpec:
    return LayerSpec("conv2d", cin, cout, kernel, stride, padding)


def linear(cin, cout) -> LayerSpec:
    return LayerSpec("linear", cin, cout)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def group_norm(channels, groups=4) -> LayerSpec:
    return LayerSpec("group_norm", channels, channels, groups=groups)


def softmax() -> LayerSpec:
    return LayerSpec("softmax")


def init_params(spec: LayerSpec, rng: np.random.Generator, dtype=np.float32) -> dict[str, Tensor]:
    """Uniform He-style init scaled by fan-in."""
    nd = spec.spatial_dims
    if spec.kind in ("conv3d", "conv2d"):
        wshape = (spec.out_channels, spec.in_channels) + (spec.kernel,) * nd
        fan_in = spec.in_channels * spec.kernel ** nd
    elif spec.kind == "transposed_conv3d":
        wshape = (spec.in_channels, spec.out_channels) + (spec.kernel,) * nd
        # each output voxel sums over in_channels * (kernel/stride)^nd taps
        fan_in = spec.in_channels * max(1, (spec.kernel // spec.stride)) ** nd
    elif spec.kind == "linear":
        wshape = (spec.out_channels, spec.in_channels)
        fan_in = spec.in_channels
    elif spec.kind == "group_norm":
        return {
            "gamma": Tensor(np.ones(spec.in_channels, dtype=dtype), requires_grad=True),
            "beta": Tensor(np.zeros(spec.in_channels, dtype=dtype), requires_grad=True),
        }
    else:
        return {}
    bound = np.sqrt(6.0 / fan_in)
    params = {"weight": Tensor(rng.uniform(-bound, bound, wshape).astype(dtype), requires_grad=True)}
    if spec.bias:
        params["bias"] = Tensor(np.zeros(spec.out_channels, dtype=dtype), requires_grad=True)
    return params


def _group_norm(x: Tensor, gamma: Tensor, beta: Tensor, groups: int, eps: float = 1e-5) -> Tensor:
    n, c = x.shape[:2]
    xr = x.reshape(n, groups, -1)
    mu = T.mean(xr, axis=2, keepdims=True)
    xc = xr - mu
    var = T.mean(T.square(xc), axis=2, keepdims=True)
    xn = (xc * T.power(var + eps, -0.5)).reshape(x.shape)
    bshape = (1, c) + (1,) * (x.ndim - 2)
    return xn * gamma.reshape(bshape) + beta.reshape(bshape)


def forward(spec: LayerSpec, x: Tensor, params: dict[str, Tensor] | None = None) -> Tensor:
    params = params or {}
    x = T.as_tensor(x)
    nd = spec.spatial_dims
    if nd:
        if x.ndim != nd + 2:
            raise ValueError(f"{spec.kind}: expected {nd + 2}-d input (N, C, ...), got shape {x.shape}")
        if x.shape[1] != spec.in_channels:
            raise ValueError(f"{spec.kind}: expected {spec.in_channels} channels, got {x.shape[1]} (input {x.shape})")
    kind = spec.kind
    if kind in ("conv3d", "conv2d"):
        return conv(x, params["weight"], params.get("bias"), spec.stride, spec.padding)
    if kind == "transposed_conv3d":
        return conv_transpose(x, params["weight"], params.get("bias"), spec.stride, spec.padding)
    if kind == "linear":
        if x.shape[-1] != spec.in_channels:
            raise ValueError(f"linear: expected last dim {spec.in_channels}, got shape {x.shape}")
        out = x @ params["weight"].transpose()
        return out + params["bias"] if "bias" in params else out
    if kind == "relu":
        return T.relu(x)
    if kind == "group_norm":
        if x.ndim < 2 or x.shape[1] != spec.in_channels:
            raise ValueError(f"group_norm: expected {spec.in_channels} channels, got shape {x.shape}")
        return _group_norm(x, params["gamma"], params["beta"], spec.groups)
    if kind == "softmax":
        return T.softmax(x, axis=1)
    raise ValueError(kind)


@dataclass
class Sequential:
    """An ordered stack of layers with named parameters."""

    specs: list[LayerSpec]
    params: list[dict[str, Tensor]] = field(default_factory=list)

    @classmethod
    def build(cls, specs: list[LayerSpec], rng: np.random.Generator, dtype=np.float32) -> "Sequential":
        return cls(list(specs), [init_params(s, rng, dtype) for s in specs])

    def __call__(self, x: Tensor) -> Tensor:
        for spec, p in zip(self.specs, self.params):
            x = forward(spec, x, p)
        return x

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for i, p in enumerate(self.params):
            for k in sorted(p):
                yield f"{prefix}{i}.{k}", p[k]
