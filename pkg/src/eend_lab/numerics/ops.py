"""Dense float64 primitives: products, normalisation, activations, convolutions.

Matrices are 2-D ``numpy.float64`` arrays; feature grids for 2-D
convolutions are laid out as (time, freq, channels).
"""

import math

import numpy as np
from scipy.special import expit

from eend_lab.errors import ConfigurationError
from eend_lab.numerics import kernels

ACTIVATIONS = ("sigmoid", "swish", "relu", "glu")


def as_matrix(a, name="matrix"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ConfigurationError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def matmul(a, b):
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ConfigurationError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalise each row to zero mean and unit (biased) variance, then scale and shift."""
    x = as_matrix(x, "x")
    if x.shape[1] == 0:
        raise ConfigurationError("layer_norm on zero-length rows")
    gain = np.asarray(gain, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise ConfigurationError(
            f"gain/bias must have length {x.shape[1]}, got {gain.shape}/{bias.shape}")
    if eps <= 0:
        raise ConfigurationError("eps must be positive")
    return normalize(x, gain, bias, eps, axis=1)[0]


def normalize(x, gain, bias, eps, axis):
    """Zero-mean, unit-variance along ``axis``; returns (out, xhat, inv_std).

    Shared by layer norm and the conv-module sequence norm so that both
    paths produce bitwise-identical values.
    """
    inv_n = 1.0 / x.shape[axis]
    centered = x - x.sum(axis=axis, keepdims=True) * inv_n
    var = np.square(centered).sum(axis=axis, keepdims=True) * inv_n
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    return xhat * gain + bias, xhat, inv_std


def sigmoid(x):
    return expit(np.asarray(x, dtype=np.float64))


def swish(x):
    return x * sigmoid(x)


def relu(x):
    return np.maximum(x, 0.0)


def glu(x):
    """Gated linear unit over the last axis: first half times sigmoid of the second half."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n % 2:
        raise ConfigurationError(f"glu needs an even number of columns, got {n}")
    return x[..., : n // 2] * sigmoid(x[..., n // 2:])


def activation(x, kind):
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "swish":
        return swish(x)
    if kind == "relu":
        return relu(np.asarray(x, dtype=np.float64))
    if kind == "glu":
        return glu(x)
    raise ConfigurationError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def same_padding(length, kernel, stride):
    """(left, right, out_length) for "same" zero padding.

    The output length is ceil(length / stride); the left pad is the floor
    half of the total pad, so for stride 1 it is (kernel - 1) // 2.
    """
    if kernel < 1 or stride < 1:
        raise ConfigurationError(f"kernel and stride must be >= 1, got {kernel}, {stride}")
    out = -(-length // stride)
    total = max((out - 1) * stride + kernel - length, 0)
    left = total // 2
    return left, total - left, out


def conv1d_depthwise(x, kernel):
    """Per-channel 1-D convolution along time, stride 1, "same" zero padding.

    Args:
        x: (T, C) matrix.
        kernel: (C, K) weights, one row per channel.
    """
    x = as_matrix(x, "x")
    kernel = as_matrix(kernel, "kernel")
    if kernel.shape[0] != x.shape[1] or kernel.shape[1] < 1:
        raise ConfigurationError(
            f"kernel shape {kernel.shape} does not fit input with {x.shape[1]} channels")
    K = kernel.shape[1]
    return kernels.dwconv1d_forward(x, kernel.T, (K - 1) // 2)


def conv2d_depthwise_separable(x, depthwise, pointwise, strides, pointwise_bias=None):
    """Depthwise spatial convolution followed by a 1x1 pointwise channel mix.

    Args:
        x: (T, F, C_in) grid.
        depthwise: (k_t, k_f, C_in) kernel, one spatial filter per channel.
        pointwise: (C_in, C_out) mixing matrix.
        strides: (s_t, s_f).
        pointwise_bias: optional (C_out,) bias.

    Returns:
        (ceil(T/s_t), ceil(F/s_f), C_out) grid.
    """
    x = np.asarray(x, dtype=np.float64)
    depthwise = np.asarray(depthwise, dtype=np.float64)
    pointwise = np.asarray(pointwise, dtype=np.float64)
    if x.ndim != 3 or depthwise.ndim != 3 or pointwise.ndim != 2:
        raise ConfigurationError("expected x (T,F,C), depthwise (kt,kf,C), pointwise (C,C_out)")
    if depthwise.shape[2] != x.shape[2] or pointwise.shape[0] != x.shape[2]:
        raise ConfigurationError(
            f"channel mismatch: x {x.shape}, depthwise {depthwise.shape}, pointwise {pointwise.shape}")
    s_t, s_f = strides
    xp, n_t, n_f = pad_same_2d(x, depthwise.shape[:2], strides)
    spatial = kernels.dwconv2d_forward(xp, depthwise, s_t, s_f, n_t, n_f)
    out = spatial @ pointwise
    if pointwise_bias is not None:
        out = out + pointwise_bias
    return out


def pad_same_2d(x, kernel_size, strides):
    lt, rt, n_t = same_padding(x.shape[0], kernel_size[0], strides[0])
    lf, rf, n_f = same_padding(x.shape[1], kernel_size[1], strides[1])
    return np.pad(x, ((lt, rt), (lf, rf), (0, 0))), n_t, n_f


def is_finite(x):
    return bool(np.all(np.isfinite(x))) if np.ndim(x) else math.isfinite(x)
