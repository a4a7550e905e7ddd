"""Composable neural layers: convolution blocks, pooling, fully connected."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import ConvSpec, Tensor


def _glorot_limit(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


class Linear:
    """Affine map y = W x + b with W of shape [out, in]."""

    def __init__(self, in_features: int, out_features: int, rng=None):
        self.in_features = in_features
        self.out_features = out_features
        limit = _glorot_limit(in_features, out_features)
        self.weight = T.uniform((out_features, in_features), -limit, limit, rng=rng, requires_grad=True)
        self.bias = T.zeros((out_features,), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        single = x.ndim == 1
        if single:
            x = T.reshape(x, (1, x.shape[0]))
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"linear: input shape {list(x.shape)} incompatible with in={self.in_features}")
        y = T.add(T.matmul(x, T.transpose(self.weight, (1, 0))), self.bias)
        return T.reshape(y, (self.out_features,)) if single else y

    def parameter_count(self) -> int:
        return self.in_features * self.out_features + self.out_features

    def parameters(self, prefix: str):
        return [(f"{prefix}.weight", self.weight), (f"{prefix}.bias", self.bias)]


class Conv2d:
    """Convolution block owning its kernels and per-channel biases."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int = 1, padding: int = 0, rng=None):
        self.spec = ConvSpec(in_channels, out_channels, kernel, kernel, stride, padding)
        fan_in = in_channels * kernel * kernel
        fan_out = out_channels * kernel * kernel
        limit = _glorot_limit(fan_in, fan_out)
        self.weight = T.uniform(
            (out_channels, in_channels, kernel, kernel), -limit, limit, rng=rng, requires_grad=True
        )
        self.bias = T.zeros((out_channels,), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.spec)

    def parameter_count(self) -> int:
        s = self.spec
        return s.out_channels * s.in_channels * s.kernel_h * s.kernel_w + s.out_channels

    def parameters(self, prefix: str):
        return [(f"{prefix}.weight", self.weight), (f"{prefix}.bias", self.bias)]


@dataclass(frozen=True)
class PoolSpec:
    kind: str  # "max" or "average"
    window: int
    stride: int

    def __post_init__(self):
        if self.kind not in ("max", "average"):
            raise ShapeError(f"pool kind must be 'max' or 'average', got {self.kind!r}")
        if self.window < 1 or self.stride < 1:
            raise ShapeError(f"pool window and stride must be positive: {self}")

    def out_extent(self, in_extent: int) -> int:
        out = (in_extent - self.window) // self.stride + 1
        if out < 1:
            raise ShapeError(f"pool window {self.window} larger than input extent {in_extent}")
        return out


def pool2d(x: Tensor, spec: PoolSpec) -> Tensor:
    """Per-window max or mean over [C,H,W] or [B,C,H,W] input.

    Max pooling routes the gradient to the window maximum, first element in
    row-major order on ties.
    """
    single = x.ndim == 3
    if single:
        x = T.reshape(x, (1,) + x.shape)
    if x.ndim != 4:
        raise ShapeError(f"pool2d: input must have rank 3 or 4, got {x.ndim}")
    bsz, c, h_in, w_in = x.shape
    ho, wo = spec.out_extent(h_in), spec.out_extent(w_in)
    w = spec.window

    s0, s1, s2, s3 = x.data.strides
    windows = np.lib.stride_tricks.as_strided(
        x.data, (bsz, c, ho, wo, w, w), (s0, s1, s2 * spec.stride, s3 * spec.stride, s2, s3), writeable=False
    )
    flat = windows.reshape(bsz, c, ho, wo, w * w)
    xt = x

    if spec.kind == "max":
        idx = flat.argmax(axis=-1)
        out_data = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

        def grad_fn(g):
            dx = np.zeros_like(xt.data)
            bi, ci, ii, ji = np.indices((bsz, c, ho, wo), sparse=True)
            np.add.at(dx, (bi, ci, ii * spec.stride + idx // w, ji * spec.stride + idx % w), g)
            T.accumulate_grad(xt, dx)

    else:
        out_data = flat.mean(axis=-1, dtype=T.DTYPE)

        def grad_fn(g):
            share = g / (w * w)
            dx = np.zeros_like(xt.data)
            st = spec.stride
            for i in range(w):
                for j in range(w):
                    dx[:, :, i : i + st * ho : st, j : j + st * wo : st] += share
            T.accumulate_grad(xt, dx)

    out = T.make_op(out_data, (x,), grad_fn)
    return T.reshape(out, out.shape[1:]) if single else out


def flatten(x: Tensor) -> Tensor:
    """Collapse to a rank-1 vector, preserving row-major data order."""
    return T.reshape(x, (x.size,))
