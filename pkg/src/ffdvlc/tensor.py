"""Dense (batch, channel, height, width) operations with explicit gradients.

Only the primitives the denoiser needs are provided: 3x3 zero-padded
convolution, ReLU, batch normalization, pixel (un)shuffle, channel
concatenation and the squared-error loss. Every forward op has a matching
backward op returning gradients with respect to its inputs and parameters.
Arrays keep the dtype they are given: float32 for training and inference,
float64 for gradient verification.

Checked mode (see ``checked``) rejects NaN/Inf values at op boundaries.
"""

import functools
import math
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from ovld import ovld, recurse

from .utils import (
    DomainError,
    NonFiniteError,
    ShapeError,
    StatisticsError,
    keyword_decorator,
)

_checked = ContextVar("ffdvlc_checked", default=False)


def set_checked(enabled):
    """Globally enable or disable NaN/Inf rejection at op boundaries."""
    _checked.set(bool(enabled))


def is_checked():
    return _checked.get()


@contextmanager
def checked(enabled=True):
    """Context manager enabling (or disabling) checked mode temporarily."""
    token = _checked.set(bool(enabled))
    try:
        yield
    finally:
        _checked.reset(token)


@dataclass
class Tensor:
    """4-axis array with an optional gradient of the same shape."""

    values: np.ndarray
    grad: np.ndarray = None

    def __post_init__(self):
        if self.values.ndim != 4:
            raise ShapeError(
                f"Tensors have 4 axes (batch, channel, height, width),"
                f" got shape {self.values.shape}"
            )
        if self.grad is not None and self.grad.shape != self.values.shape:
            raise ShapeError(
                f"Gradient shape {self.grad.shape} does not match"
                f" value shape {self.values.shape}"
            )

    @property
    def shape(self):
        return self.values.shape


@dataclass
class ConvLayerParams:
    """Weights (out_ch, in_ch, 3, 3) and bias (out_ch) of a 3x3 convolution."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 4 or self.weights.shape[2:] != (3, 3):
            raise ShapeError(
                f"Convolution kernels are 3x3, got {self.weights.shape}"
            )
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"Bias shape {self.bias.shape} does not match"
                f" {self.weights.shape[0]} output channels"
            )

    @property
    def in_channels(self):
        return self.weights.shape[1]

    @property
    def out_channels(self):
        return self.weights.shape[0]


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.1

    def __post_init__(self):
        if not self.epsilon > 0:
            raise DomainError(f"epsilon={self.epsilon} must be positive")
        if not 0 < self.momentum < 1:
            raise DomainError(f"momentum={self.momentum} must be in (0, 1)")
        if np.any(self.running_var < 0):
            raise DomainError("Running variances must be nonnegative")

    @property
    def channels(self):
        return self.gamma.shape[0]


@dataclass(frozen=True)
class ReLU:
    """Parameterless rectifier, present so layer lists can be walked."""


@ovld
def values_of(x: Tensor):
    return x.values


@ovld
def values_of(x: np.ndarray):
    return x


@ovld
def assert_finite(x: np.ndarray, where: str):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"Non-finite values encountered in {where}")


@ovld
def assert_finite(x: Tensor, where: str):
    recurse(x.values, where)
    if x.grad is not None:
        recurse(x.grad, where)


@ovld
def assert_finite(x: float, where: str):
    if not math.isfinite(x):
        raise NonFiniteError(f"Non-finite value {x} encountered in {where}")


@ovld
def assert_finite(xs: tuple | list, where: str):
    for x in xs:
        recurse(x, where)


@ovld
def assert_finite(x: object, where: str):
    pass


@keyword_decorator
def checked_op(fn, inputs=True, outputs=True):
    """Validate array arguments and results of ``fn`` in checked mode."""

    @functools.wraps(fn)
    def wrapped(*args, **kwargs):
        if not _checked.get():
            return fn(*args, **kwargs)
        if inputs:
            assert_finite(args, fn.__name__)
        result = fn(*args, **kwargs)
        if outputs:
            assert_finite(result, fn.__name__)
        return result

    return wrapped


def _expect_4d(x, where):
    if x.ndim != 4:
        raise ShapeError(f"{where} expects a 4-axis tensor, got {x.shape}")


def _pad1(x):
    return np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))


def _windows(xp):
    # (b, c, h, w, 3, 3) view of every 3x3 neighbourhood
    return sliding_window_view(xp, (3, 3), axis=(2, 3))


def _check_conv(x, params):
    _expect_4d(x, "conv2d")
    if x.shape[1] != params.in_channels:
        raise ShapeError(
            f"conv2d expects {params.in_channels} input channels,"
            f" got {x.shape[1]}"
        )


@checked_op
def conv2d_forward(input, params):
    """3x3 convolution, stride 1, zero padding 1 (spatial size preserved)."""
    x = values_of(input)
    _check_conv(x, params)
    cols = _windows(_pad1(x))
    out = np.tensordot(cols, params.weights, axes=([1, 4, 5], [1, 2, 3]))
    out = out.transpose(0, 3, 1, 2) + params.bias[None, :, None, None]
    return np.ascontiguousarray(out)


@checked_op
def conv2d_backward(input, params, upstream):
    """Return ``(input_grad, weight_grad, bias_grad)`` of ``conv2d_forward``."""
    x = values_of(input)
    g = values_of(upstream)
    _check_conv(x, params)
    expected = (x.shape[0], params.out_channels, *x.shape[2:])
    if g.shape != expected:
        raise ShapeError(
            f"Upstream gradient shape {g.shape} != output shape {expected}"
        )
    bias_grad = g.sum(axis=(0, 2, 3))
    weight_grad = np.tensordot(g, _windows(_pad1(x)), axes=([0, 2, 3], [0, 2, 3]))
    flipped = params.weights[:, :, ::-1, ::-1]
    input_grad = np.tensordot(
        _windows(_pad1(g)), flipped, axes=([1, 4, 5], [0, 2, 3])
    )
    input_grad = np.ascontiguousarray(input_grad.transpose(0, 3, 1, 2))
    return input_grad, weight_grad, bias_grad


@checked_op
def relu_forward(input):
    x = values_of(input)
    return np.maximum(x, 0).astype(x.dtype, copy=False)


@checked_op
def relu_backward(input, upstream):
    x = values_of(input)
    g = values_of(upstream)
    if x.shape != g.shape:
        raise ShapeError(f"Shape mismatch: {x.shape} vs {g.shape}")
    return g * (x > 0)


def _channel_stats(x):
    count = x.size // x.shape[1]
    if count < 2:
        raise StatisticsError(
            "Batch normalization needs at least two elements per channel"
            f" in train mode, got {count}"
        )
    return count, x.mean(axis=(0, 2, 3)), x.var(axis=(0, 2, 3))


def _per_channel(v):
    return v[None, :, None, None]


@ovld
def _batchnorm(x: np.ndarray, params: BatchNormParams, mode: Literal["train"]):
    count, mean, var = _channel_stats(x)
    xhat = (x - _per_channel(mean)) / np.sqrt(_per_channel(var) + params.epsilon)
    m = params.momentum
    dtype = params.running_mean.dtype
    params.running_mean = ((1 - m) * params.running_mean + m * mean).astype(dtype)
    # Running variance uses the unbiased estimate
    unbiased = var * (count / (count - 1))
    params.running_var = ((1 - m) * params.running_var + m * unbiased).astype(dtype)
    return _per_channel(params.gamma) * xhat + _per_channel(params.beta)


@ovld
def _batchnorm(
    x: np.ndarray, params: BatchNormParams, mode: Literal["inference"]
):
    scale = params.gamma / np.sqrt(params.running_var + params.epsilon)
    shift = params.beta - params.running_mean * scale
    return (x * _per_channel(scale) + _per_channel(shift)).astype(x.dtype)


@ovld
def _batchnorm(x: np.ndarray, params: BatchNormParams, mode: str):
    raise DomainError(f"Unknown mode {mode!r}; use 'train' or 'inference'")


@checked_op
def batchnorm_forward(input, params, mode="train"):
    """Batch normalization followed by the per-channel affine map.

    In ``"train"`` mode the batch statistics are used and the running
    statistics of ``params`` are updated by exponential moving average. In
    ``"inference"`` mode the running statistics are used.
    """
    x = values_of(input)
    _expect_4d(x, "batchnorm")
    if x.shape[1] != params.channels:
        raise ShapeError(
            f"batchnorm expects {params.channels} channels, got {x.shape[1]}"
        )
    return _batchnorm(x, params, mode)


@checked_op
def batchnorm_backward(input, params, upstream):
    """Return ``(input_grad, gamma_grad, beta_grad)`` of train-mode forward."""
    x = values_of(input)
    g = values_of(upstream)
    if x.shape != g.shape:
        raise ShapeError(f"Shape mismatch: {x.shape} vs {g.shape}")
    count, mean, var = _channel_stats(x)
    inv_std = 1.0 / np.sqrt(var + params.epsilon)
    xhat = (x - _per_channel(mean)) * _per_channel(inv_std)
    gamma_grad = np.sum(g * xhat, axis=(0, 2, 3))
    beta_grad = np.sum(g, axis=(0, 2, 3))
    dxhat = g * _per_channel(params.gamma)
    input_grad = (
        _per_channel(inv_std / count)
        * (
            count * dxhat
            - _per_channel(np.sum(dxhat, axis=(0, 2, 3)))
            - xhat * _per_channel(np.sum(dxhat * xhat, axis=(0, 2, 3)))
        )
    ).astype(x.dtype)
    return input_grad, gamma_grad, beta_grad


@checked_op
def pixel_unshuffle(input, factor=2):
    """(b, c, h, w) -> (b, c*f*f, h/f, w/f).

    Output channel ``c*f*f + k`` holds the sub-image at row offset
    ``k // f`` and column offset ``k % f``.
    """
    x = values_of(input)
    _expect_4d(x, "pixel_unshuffle")
    b, c, h, w = x.shape
    if h % factor or w % factor:
        raise ShapeError(
            f"pixel_unshuffle needs spatial dimensions divisible by"
            f" {factor}, got {h}x{w}"
        )
    x = x.reshape(b, c, h // factor, factor, w // factor, factor)
    x = x.transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(x).reshape(
        b, c * factor * factor, h // factor, w // factor
    )


@checked_op
def pixel_shuffle(input, factor=2):
    """Exact inverse of ``pixel_unshuffle``."""
    x = values_of(input)
    _expect_4d(x, "pixel_shuffle")
    b, c, h, w = x.shape
    if c % (factor * factor):
        raise ShapeError(
            f"pixel_shuffle needs channels divisible by {factor * factor},"
            f" got {c}"
        )
    x = x.reshape(b, c // (factor * factor), factor, factor, h, w)
    x = x.transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(x).reshape(
        b, c // (factor * factor), h * factor, w * factor
    )


@checked_op
def concat_channels(a, b):
    """Concatenate along the channel axis, ``a`` first."""
    a = values_of(a)
    b = values_of(b)
    _expect_4d(a, "concat_channels")
    _expect_4d(b, "concat_channels")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(
            f"Cannot concatenate {a.shape} and {b.shape} along channels"
        )
    return np.concatenate([a, b], axis=1)


@checked_op
def mse_loss(pred, target, scale):
    """Return ``scale * sum((pred - target)^2)`` and its gradient."""
    p = values_of(pred)
    t = values_of(target)
    if p.shape != t.shape:
        raise ShapeError(f"Shape mismatch: {p.shape} vs {t.shape}")
    diff = p - t
    loss = float(scale * np.sum(diff.astype(np.float64) ** 2))
    return loss, (2 * scale * diff).astype(p.dtype)


def receptive_field(depth, factor=2):
    """Full-resolution receptive field of ``depth`` stacked 3x3 convolutions
    applied after a ``factor`` downsampling (62 for depth 15).
    """
    return factor * (2 * depth + 1)


__all__ = [
    "Tensor",
    "ConvLayerParams",
    "BatchNormParams",
    "ReLU",
    "set_checked",
    "is_checked",
    "checked",
    "checked_op",
    "values_of",
    "assert_finite",
    "conv2d_forward",
    "conv2d_backward",
    "relu_forward",
    "relu_backward",
    "batchnorm_forward",
    "batchnorm_backward",
    "pixel_unshuffle",
    "pixel_shuffle",
    "concat_channels",
    "mse_loss",
    "receptive_field",
]
