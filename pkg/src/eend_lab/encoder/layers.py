"""Forward/backward pairs for the encoder building blocks.

Every ``*_forward`` returns ``(output, cache)``; the matching
``*_backward(dout, cache)`` returns the input gradient and writes parameter
gradients into ``grads`` under the same names used in :mod:`params`.
"""

import math

import numpy as np

from eend_lab.numerics import kernels
from eend_lab.numerics.ops import normalize, pad_same_2d, same_padding, sigmoid


def _acc(grads, name, value):
    if name in grads:
        grads[name] += value
    else:
        grads[name] = value


def linear_forward(x, p, prefix):
    return x @ p[f"{prefix}.weight"] + p[f"{prefix}.bias"], x


def linear_backward(dy, x, p, prefix, grads):
    w = p[f"{prefix}.weight"]
    x2 = x.reshape(-1, w.shape[0])
    dy2 = dy.reshape(-1, w.shape[1])
    _acc(grads, f"{prefix}.weight", x2.T @ dy2)
    _acc(grads, f"{prefix}.bias", dy2.sum(axis=0))
    return dy @ w.T


def norm_forward(x, gain, bias, eps, axis):
    out, xhat, inv_std = normalize(x, gain, bias, eps, axis)
    return out, (xhat, inv_std)


def norm_backward(dy, cache, gain, axis):
    """Returns (dx, dgain, dbias) for normalisation along ``axis`` (0 or 1).

    Gains are per column in both cases, so their gradients reduce over rows.
    """
    xhat, inv_std = cache
    dgain = (dy * xhat).sum(axis=0)
    dbias = dy.sum(axis=0)
    dxhat = dy * gain
    n = xhat.shape[axis]
    dx = inv_std / n * (n * dxhat
                        - dxhat.sum(axis=axis, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=axis, keepdims=True))
    return dx, dgain, dbias


def layer_norm_forward(x, p, prefix, eps):
    return norm_forward(x, p[f"{prefix}.gain"], p[f"{prefix}.bias"], eps, axis=1)


def layer_norm_backward(dy, cache, p, prefix, grads):
    dx, dg, db = norm_backward(dy, cache, p[f"{prefix}.gain"], axis=1)
    _acc(grads, f"{prefix}.gain", dg)
    _acc(grads, f"{prefix}.bias", db)
    return dx


def swish_forward(u):
    s = sigmoid(u)
    return u * s, (u, s)


def swish_backward(dy, cache):
    u, s = cache
    return dy * (s + u * s * (1.0 - s))


def mhsa_forward(x, p, prefix, n_heads):
    """Multi-head scaled dot-product self-attention, no mask, no positional encoding."""
    T, D = x.shape
    dk = D // n_heads
    scale = 1.0 / math.sqrt(dk)
    q, _ = linear_forward(x, p, f"{prefix}.q")
    k, _ = linear_forward(x, p, f"{prefix}.k")
    v, _ = linear_forward(x, p, f"{prefix}.v")
    qh = q.reshape(T, n_heads, dk).transpose(1, 0, 2)
    kh = k.reshape(T, n_heads, dk).transpose(1, 0, 2)
    vh = v.reshape(T, n_heads, dk).transpose(1, 0, 2)
    scores = qh @ kh.transpose(0, 2, 1) * scale
    scores -= scores.max(axis=-1, keepdims=True)
    attn = np.exp(scores)
    attn /= attn.sum(axis=-1, keepdims=True)
    ctx = (attn @ vh).transpose(1, 0, 2).reshape(T, D)
    out, _ = linear_forward(ctx, p, f"{prefix}.o")
    return out, (x, qh, kh, vh, attn, ctx, scale)


def mhsa_backward(dout, cache, p, prefix, grads):
    x, qh, kh, vh, attn, ctx, scale = cache
    T, D = x.shape
    n_heads, _, dk = qh.shape
    dctx = linear_backward(dout, ctx, p, f"{prefix}.o", grads)
    dctx = dctx.reshape(T, n_heads, dk).transpose(1, 0, 2)
    dattn = dctx @ vh.transpose(0, 2, 1)
    dvh = attn.transpose(0, 2, 1) @ dctx
    dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
    dqh = dscores @ kh * scale
    dkh = dscores.transpose(0, 2, 1) @ qh * scale

    def merge(h):
        return h.transpose(1, 0, 2).reshape(T, D)

    dx = linear_backward(merge(dqh), x, p, f"{prefix}.q", grads)
    dx += linear_backward(merge(dkh), x, p, f"{prefix}.k", grads)
    dx += linear_backward(merge(dvh), x, p, f"{prefix}.v", grads)
    return dx


def ffn_forward(x, p, prefix, act):
    u, _ = linear_forward(x, p, f"{prefix}.fc1")
    if act == "relu":
        h, act_cache = np.maximum(u, 0.0), u > 0
    else:
        h, act_cache = swish_forward(u)
    y, _ = linear_forward(h, p, f"{prefix}.fc2")
    return y, (x, h, act, act_cache)


def ffn_backward(dy, cache, p, prefix, grads):
    x, h, act, act_cache = cache
    dh = linear_backward(dy, h, p, f"{prefix}.fc2", grads)
    du = dh * act_cache if act == "relu" else swish_backward(dh, act_cache)
    return linear_backward(du, x, p, f"{prefix}.fc1", grads)


def conv_module_forward(x, p, prefix, eps):
    """Pointwise(D->2D), GLU, depthwise conv over time, per-channel sequence norm, swish, pointwise(D->D)."""
    d = x.shape[1]
    a, _ = linear_forward(x, p, f"{prefix}.pointwise1")
    gate = sigmoid(a[:, d:])
    g = a[:, :d] * gate
    w = p[f"{prefix}.depthwise.weight"]
    left = (w.shape[0] - 1) // 2
    c = kernels.dwconv1d_forward(g, w, left) + p[f"{prefix}.depthwise.bias"]
    n, norm_cache = norm_forward(c, p[f"{prefix}.seqnorm.scale"], p[f"{prefix}.seqnorm.shift"],
                                 eps, axis=0)
    s, swish_cache = swish_forward(n)
    y, _ = linear_forward(s, p, f"{prefix}.pointwise2")
    return y, (x, a, gate, g, left, norm_cache, swish_cache, s)


def conv_module_backward(dy, cache, p, prefix, grads):
    x, a, gate, g, left, norm_cache, swish_cache, s = cache
    d = x.shape[1]
    ds = linear_backward(dy, s, p, f"{prefix}.pointwise2", grads)
    dn = swish_backward(ds, swish_cache)
    dc, dscale, dshift = norm_backward(dn, norm_cache, p[f"{prefix}.seqnorm.scale"], axis=0)
    _acc(grads, f"{prefix}.seqnorm.scale", dscale)
    _acc(grads, f"{prefix}.seqnorm.shift", dshift)
    _acc(grads, f"{prefix}.depthwise.bias", dc.sum(axis=0))
    dg, dw = kernels.dwconv1d_backward(dc, g, p[f"{prefix}.depthwise.weight"], left)
    _acc(grads, f"{prefix}.depthwise.weight", dw)
    da = np.empty_like(a)
    da[:, :d] = dg * gate
    da[:, d:] = dg * a[:, :d] * gate * (1.0 - gate)
    return linear_backward(da, x, p, f"{prefix}.pointwise1", grads)


def dwsep_forward(x, p, prefix, kernel_size, strides):
    """Depthwise-separable 2-D conv on a (T, F, C) grid followed by ReLU."""
    xp, n_t, n_f = pad_same_2d(x, kernel_size, strides)
    spatial = kernels.dwconv2d_forward(xp, p[f"{prefix}.depthwise"], strides[0], strides[1],
                                       n_t, n_f)
    h, _ = linear_forward(spatial, p, f"{prefix}.pointwise")
    return np.maximum(h, 0.0), (x.shape, xp, spatial, h > 0, kernel_size, strides)


def dwsep_backward(dout, cache, p, prefix, grads):
    in_shape, xp, spatial, active, kernel_size, strides = cache
    dh = dout * active
    dspatial = linear_backward(dh, spatial, p, f"{prefix}.pointwise", grads)
    dxp, dw = kernels.dwconv2d_backward(dspatial, xp, p[f"{prefix}.depthwise"], *strides)
    _acc(grads, f"{prefix}.depthwise", dw)
    lt = same_padding(in_shape[0], kernel_size[0], strides[0])[0]
    lf = same_padding(in_shape[1], kernel_size[1], strides[1])[0]
    return dxp[lt:lt + in_shape[0], lf:lf + in_shape[1]]


def dropout_forward(x, rate, rng):
    """Inverted dropout; returns (y, mask) with mask None when inactive."""
    if rate <= 0.0 or rng is None:
        return x, None
    keep = rng.random_array(x.size).reshape(x.shape) >= rate
    mask = keep / (1.0 - rate)
    return x * mask, mask


def dropout_backward(dy, mask):
    return dy if mask is None else dy * mask
