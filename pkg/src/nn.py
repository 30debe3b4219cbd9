# src/nn.py
# Parameter dataclasses and the small blocks every module is assembled from.
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from src import tensor_core as tc
from src.tensor_core import Tensor

LEAKY_SLOPE = 0.1
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def param(data) -> Tensor:
    return Tensor(np.ascontiguousarray(data, dtype=np.float32), requires_grad=True)


def buffer(data) -> Tensor:
    return Tensor(np.ascontiguousarray(data, dtype=np.float32))


def _uniform(rng: np.random.Generator, bound: float, shape) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


# =========================
# Convolution
# =========================
@dataclass
class ConvParams:
    weight: Tensor
    bias: Tensor | None = None
    stride: int = 1
    padding: int = 0
    dilation: int = 1
    groups: int = 1


def init_conv(
    rng: np.random.Generator,
    c_in: int,
    c_out: int,
    kernel: int = 3,
    stride: int = 1,
    padding: int | None = None,
    dilation: int = 1,
    groups: int = 1,
    bias: bool = True,
) -> ConvParams:
    if padding is None:
        padding = dilation * (kernel // 2)
    fan_in = (c_in // groups) * kernel * kernel
    bound = 1.0 / np.sqrt(fan_in)
    w = param(_uniform(rng, bound, (c_out, c_in // groups, kernel, kernel)))
    b = param(_uniform(rng, bound, (c_out,))) if bias else None
    return ConvParams(w, b, stride=stride, padding=padding, dilation=dilation, groups=groups)


def conv(x: Tensor, p: ConvParams) -> Tensor:
    return tc.conv2d(x, p.weight, p.bias, p.stride, p.padding, p.dilation, p.groups)


# =========================
# Normalization
# =========================
@dataclass
class NormParams:
    gamma: Tensor
    beta: Tensor
    running_mean: Tensor
    running_var: Tensor


def init_norm(channels: int) -> NormParams:
    return NormParams(
        gamma=param(np.ones(channels)),
        beta=param(np.zeros(channels)),
        running_mean=buffer(np.zeros(channels)),
        running_var=buffer(np.ones(channels)),
    )


def batch_norm(x: Tensor, p: NormParams, training: bool = False) -> Tensor:
    """Per-channel batch normalization; train mode uses batch stats and updates the running ones."""
    c = x.shape[1]
    shape = (1, c, 1, 1)
    if training:
        mu = tc.mean(x, axis=(0, 2, 3), keepdims=True)
        centered = x - mu
        var = tc.mean(centered * centered, axis=(0, 2, 3), keepdims=True)
        n = x.data.size // c
        unbiased = var.data.reshape(c) * (n / max(n - 1, 1))
        p.running_mean.data = ((1 - BN_MOMENTUM) * p.running_mean.data + BN_MOMENTUM * mu.data.reshape(c)).astype(p.running_mean.dtype)
        p.running_var.data = ((1 - BN_MOMENTUM) * p.running_var.data + BN_MOMENTUM * unbiased).astype(p.running_var.dtype)
        xhat = centered * tc.power(var + BN_EPS, -0.5)
    else:
        mu = p.running_mean.data.reshape(shape)
        inv = 1.0 / np.sqrt(p.running_var.data.reshape(shape) + BN_EPS)
        xhat = (x - tc.as_tensor(mu, like=x)) * tc.as_tensor(inv, like=x)
    return xhat * tc.reshape(p.gamma, shape) + tc.reshape(p.beta, shape)


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor


def init_layer_norm(dim: int) -> LayerNormParams:
    return LayerNormParams(param(np.ones(dim)), param(np.zeros(dim)))


def layer_norm(x: Tensor, p: LayerNormParams) -> Tensor:
    mu = tc.mean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = tc.mean(centered * centered, axis=-1, keepdims=True)
    return centered * tc.power(var + BN_EPS, -0.5) * p.gamma + p.beta


# =========================
# CBL
# =========================
@dataclass
class CblParams:
    conv: ConvParams
    norm: NormParams
    slope: float = LEAKY_SLOPE


def init_cbl(rng, c_in: int, c_out: int, kernel: int = 3, stride: int = 1, dilation: int = 1, padding: int | None = None) -> CblParams:
    return CblParams(
        conv=init_conv(rng, c_in, c_out, kernel, stride=stride, padding=padding, dilation=dilation, bias=False),
        norm=init_norm(c_out),
    )


def cbl(x: Tensor, p: CblParams, training: bool = False) -> Tensor:
    """conv -> batch norm -> leaky rectification (slope 0.1)."""
    return tc.leaky_relu(batch_norm(conv(x, p.conv), p.norm, training), p.slope)


# =========================
# Linear / MLP
# =========================
@dataclass
class LinearParams:
    weight: Tensor
    bias: Tensor | None = None


def init_linear(rng, d_in: int, d_out: int, bias: bool = True) -> LinearParams:
    bound = 1.0 / np.sqrt(d_in)
    return LinearParams(
        param(_uniform(rng, bound, (d_out, d_in))),
        param(_uniform(rng, bound, (d_out,))) if bias else None,
    )


def dense(x: Tensor, p: LinearParams) -> Tensor:
    return tc.linear(x, p.weight, p.bias)


@dataclass
class MlpParams:
    fc1: LinearParams
    fc2: LinearParams


def init_mlp(rng, d_in: int, d_hidden: int, d_out: int) -> MlpParams:
    return MlpParams(init_linear(rng, d_in, max(1, d_hidden)), init_linear(rng, max(1, d_hidden), d_out))


def mlp(x: Tensor, p: MlpParams) -> Tensor:
    return dense(tc.relu(dense(x, p.fc1)), p.fc2)


def pooled_mlp(pooled: Tensor, p: MlpParams) -> Tensor:
    """Apply an MLP to a BC11 pooled descriptor, keeping the BC11 layout."""
    b, c = pooled.shape[0], pooled.shape[1]
    out = mlp(tc.reshape(pooled, (b, c)), p)
    return tc.reshape(out, (b, out.shape[1], 1, 1))


# =========================
# Attention / separable conv
# =========================
@dataclass
class ChannelAttentionParams:
    mlp: MlpParams


def init_channel_attention(rng, channels: int, reduction: int = 4) -> ChannelAttentionParams:
    return ChannelAttentionParams(init_mlp(rng, channels, channels // reduction, channels))


def channel_attention(x: Tensor, p: ChannelAttentionParams) -> Tensor:
    """GAP -> MLP -> sigmoid; returns the BC11 gate."""
    return tc.sigmoid(pooled_mlp(tc.global_pool(x, "average"), p.mlp))


@dataclass
class SeparableParams:
    depthwise: ConvParams
    pointwise: ConvParams


def init_separable(rng, c_in: int, c_out: int, kernel: int = 3) -> SeparableParams:
    return SeparableParams(
        depthwise=init_conv(rng, c_in, c_in, kernel, groups=c_in),
        pointwise=init_conv(rng, c_in, c_out, 1),
    )


def separable(x: Tensor, p: SeparableParams) -> Tensor:
    return conv(conv(x, p.depthwise), p.pointwise)


def zero_(params) -> None:
    """Zero every trainable tensor under params in place (test and ablation helper)."""
    for t in tc.NamedTensorSet.collect(params).trainable().values():
        t.data = np.zeros_like(t.data)

