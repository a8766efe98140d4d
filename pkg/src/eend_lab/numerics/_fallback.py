"""Pure-numpy depthwise convolution kernels.

Reference versions of the compiled kernels in ``_kernels.pyx``. Forward
passes accumulate taps in kernel order starting from zero, the same order
the compiled loops use.
"""

import numpy as np


def dwconv1d_forward(x, w, left):
    T, _ = x.shape
    K = w.shape[0]
    xp = np.pad(x, ((left, K - 1 - left), (0, 0)))
    out = np.zeros_like(x)
    for k in range(K):
        out += xp[k:k + T] * w[k]
    return out


def dwconv1d_backward(dy, x, w, left):
    T, _ = x.shape
    K = w.shape[0]
    xp = np.pad(x, ((left, K - 1 - left), (0, 0)))
    dxp = np.zeros_like(xp)
    dw = np.empty_like(w)
    for k in range(K):
        dw[k] = np.einsum("tc,tc->c", dy, xp[k:k + T])
        dxp[k:k + T] += dy * w[k]
    return dxp[left:left + T], dw


def dwconv2d_forward(xp, w, st, sf, n_t, n_f):
    """Strided depthwise 2-D convolution of an already padded (T, F, C) grid."""
    kt, kf, _ = w.shape
    out = np.zeros((n_t, n_f, xp.shape[2]))
    t_stop = st * (n_t - 1) + 1
    f_stop = sf * (n_f - 1) + 1
    for i in range(kt):
        for j in range(kf):
            out += xp[i:i + t_stop:st, j:j + f_stop:sf] * w[i, j]
    return out


def dwconv2d_backward(dy, xp, w, st, sf):
    kt, kf, _ = w.shape
    n_t, n_f, _ = dy.shape
    t_stop = st * (n_t - 1) + 1
    f_stop = sf * (n_f - 1) + 1
    dxp = np.zeros_like(xp)
    dw = np.empty_like(w)
    for i in range(kt):
        for j in range(kf):
            window = (slice(i, i + t_stop, st), slice(j, j + f_stop, sf))
            dw[i, j] = np.einsum("tfc,tfc->c", dy, xp[window])
            dxp[window] += dy * w[i, j]
    return dxp, dw
