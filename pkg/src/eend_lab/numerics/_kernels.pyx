# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled depthwise convolution kernels (see ``_fallback`` for the reference)."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def dwconv1d_forward(const double[:, ::1] x, const double[:, ::1] w, Py_ssize_t left):
    cdef Py_ssize_t T = x.shape[0], C = x.shape[1], K = w.shape[0]
    cdef Py_ssize_t t, c, k, src
    cdef double acc
    out_arr = np.zeros((T, C), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for t in range(T):
            for c in range(C):
                acc = 0.0
                for k in range(K):
                    src = t + k - left
                    if 0 <= src < T:
                        acc = acc + x[src, c] * w[k, c]
                    else:
                        # padded taps add 0*w, as the numpy path does
                        acc = acc + 0.0 * w[k, c]
                out[t, c] = acc
    return out_arr


def dwconv1d_backward(const double[:, ::1] dy, const double[:, ::1] x,
                      const double[:, ::1] w, Py_ssize_t left):
    cdef Py_ssize_t T = x.shape[0], C = x.shape[1], K = w.shape[0]
    cdef Py_ssize_t t, c, k, src
    dx_arr = np.zeros((T, C), dtype=np.float64)
    dw_arr = np.zeros((K, C), dtype=np.float64)
    cdef double[:, ::1] dx = dx_arr
    cdef double[:, ::1] dw = dw_arr
    with nogil:
        for t in range(T):
            for k in range(K):
                src = t + k - left
                if 0 <= src < T:
                    for c in range(C):
                        dw[k, c] += dy[t, c] * x[src, c]
                        dx[src, c] += dy[t, c] * w[k, c]
    return dx_arr, dw_arr


def dwconv2d_forward(const double[:, :, ::1] xp, const double[:, :, ::1] w,
                     Py_ssize_t st, Py_ssize_t sf, Py_ssize_t n_t, Py_ssize_t n_f):
    cdef Py_ssize_t C = xp.shape[2], kt = w.shape[0], kf = w.shape[1]
    cdef Py_ssize_t t, f, c, i, j
    cdef double acc
    out_arr = np.zeros((n_t, n_f, C), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    with nogil:
        for t in range(n_t):
            for f in range(n_f):
                for c in range(C):
                    acc = 0.0
                    for i in range(kt):
                        for j in range(kf):
                            acc = acc + xp[t * st + i, f * sf + j, c] * w[i, j, c]
                    out[t, f, c] = acc
    return out_arr


def dwconv2d_backward(const double[:, :, ::1] dy, const double[:, :, ::1] xp,
                      const double[:, :, ::1] w, Py_ssize_t st, Py_ssize_t sf):
    cdef Py_ssize_t n_t = dy.shape[0], n_f = dy.shape[1], C = dy.shape[2]
    cdef Py_ssize_t kt = w.shape[0], kf = w.shape[1]
    cdef Py_ssize_t t, f, c, i, j
    cdef double g
    dxp_arr = np.zeros((xp.shape[0], xp.shape[1], C), dtype=np.float64)
    dw_arr = np.zeros((kt, kf, C), dtype=np.float64)
    cdef double[:, :, ::1] dxp = dxp_arr
    cdef double[:, :, ::1] dw = dw_arr
    with nogil:
        for t in range(n_t):
            for f in range(n_f):
                for i in range(kt):
                    for j in range(kf):
                        for c in range(C):
                            g = dy[t, f, c]
                            dw[i, j, c] += g * xp[t * st + i, f * sf + j, c]
                            dxp[t * st + i, f * sf + j, c] += g * w[i, j, c]
    return dxp_arr, dw_arr
