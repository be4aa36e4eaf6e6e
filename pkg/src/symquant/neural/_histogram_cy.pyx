# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled histogram kernels; same contract as ``_histogram_py``.

The numpy fallback materialises an ``(n, z, N)`` tensor per bag; these
loops keep one scalar per (instance, feature, bin) and never allocate it.
Each variant has its own loop nest: a variant switch inside the innermost
loop costs an order of magnitude in the backward pass.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, log

cnp.import_array()

BACKEND = "cython"

cdef double LN101 = log(1.01)
cdef double SLOPE_MIN = 1e-6


cdef inline double _expit(double t) noexcept nogil:
    cdef double e
    if t >= 0:
        return 1.0 / (1.0 + exp(-t))
    e = exp(t)
    return e / (1.0 + e)


cdef void _fwd_hard(double[:, :, ::1] x, double[:, ::1] mu, double[:, ::1] w,
                    double[:, :, ::1] out) noexcept nogil:
    cdef Py_ssize_t B = x.shape[0], n = x.shape[1], z = x.shape[2], N = mu.shape[1]
    cdef Py_ssize_t b, i, k, j
    cdef double v
    for b in range(B):
        for i in range(n):
            for k in range(z):
                v = x[b, i, k]
                for j in range(N):
                    if w[k, j] - fabs(v - mu[k, j]) > 0:
                        out[b, k, j] += 1.0


cdef void _fwd_soft(double[:, :, ::1] x, double[:, ::1] mu, double[:, ::1] w,
                    double[:, :, ::1] out) noexcept nogil:
    cdef Py_ssize_t B = x.shape[0], n = x.shape[1], z = x.shape[2], N = mu.shape[1]
    cdef Py_ssize_t b, i, k, j
    cdef double v, s, u
    for b in range(B):
        for i in range(n):
            for k in range(z):
                v = x[b, i, k]
                for j in range(N):
                    s = w[k, j] if w[k, j] > SLOPE_MIN else SLOPE_MIN
                    u = 1.0 - s * fabs(v - mu[k, j])
                    if u > 0:
                        out[b, k, j] += u


cdef void _fwd_rbf(double[:, :, ::1] x, double[:, ::1] mu, double[:, ::1] w,
                   double[:, :, ::1] out) noexcept nogil:
    cdef Py_ssize_t B = x.shape[0], n = x.shape[1], z = x.shape[2], N = mu.shape[1]
    cdef Py_ssize_t b, i, k, j
    cdef double v, u
    for b in range(B):
        for i in range(n):
            for k in range(z):
                v = x[b, i, k]
                for j in range(N):
                    u = (v - mu[k, j]) / w[k, j]
                    out[b, k, j] += exp(-u * u)


cdef void _fwd_sigmoid(double[:, :, ::1] x, double[:, ::1] mu, double[:, ::1] w,
                       double gamma, double[:, :, ::1] out) noexcept nogil:
    cdef Py_ssize_t B = x.shape[0], n = x.shape[1], z = x.shape[2], N = mu.shape[1]
    cdef Py_ssize_t b, i, k, j
    cdef double v, d
    for b in range(B):
        for i in range(n):
            for k in range(z):
                v = x[b, i, k]
                for j in range(N):
                    d = v - mu[k, j]
                    out[b, k, j] += (_expit(-gamma * (d - 0.5 * w[k, j]))
                                     * _expit(gamma * (d + 0.5 * w[k, j])))


def hist_forward(double[:, :, ::1] x, double[:, ::1] mu, double[:, ::1] w,
                 int variant, double gamma=100.0):
    cdef Py_ssize_t B = x.shape[0], n = x.shape[1], z = x.shape[2], N = mu.shape[1]
    if variant < 0 or variant > 3:
        raise ValueError(f"unknown variant {variant}")
    out_arr = np.zeros((B, z, N), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    with nogil:
        if variant == 0:
            _fwd_hard(x, mu, w, out)
        elif variant == 1:
            _fwd_soft(x, mu, w, out)
        elif variant == 2:
            _fwd_rbf(x, mu, w, out)
        else:
            _fwd_sigmoid(x, mu, w, gamma, out)
    out_arr /= n
    return out_arr


cdef void _bwd_hard(double[:, :, ::1] x, double[:, ::1] mu, double[:, ::1] w,
                    double[:, :, ::1] gout, double[:, :, ::1] gx,
                    double[:, ::1] gmu, double[:, ::1] gw) noexcept nogil:
    cdef Py_ssize_t B = x.shape[0], n = x.shape[1], z = x.shape[2], N = mu.shape[1]
    cdef Py_ssize_t b, i, k, j
    cdef double v, d, dd, g, acc, scale = LN101 / n
    for b in range(B):
        for i in range(n):
            for k in range(z):
                v = x[b, i, k]
                acc = 0.0
                for j in range(N):
                    d = v - mu[k, j]
                    dd = w[k, j] - fabs(d)
                    if dd > 700.0:
                        dd = 700.0
                    g = gout[b, k, j] * scale * exp(LN101 * dd)
                    gw[k, j] += g
                    if d > 0:
                        gmu[k, j] += g
                        acc -= g
                    elif d < 0:
                        gmu[k, j] -= g
                        acc += g
                gx[b, i, k] = acc


cdef void _bwd_soft(double[:, :, ::1] x, double[:, ::1] mu, double[:, ::1] w,
                    double[:, :, ::1] gout, double[:, :, ::1] gx,
                    double[:, ::1] gmu, double[:, ::1] gw) noexcept nogil:
    cdef Py_ssize_t B = x.shape[0], n = x.shape[1], z = x.shape[2], N = mu.shape[1]
    cdef Py_ssize_t b, i, k, j
    cdef double v, d, s, g, acc, inv_n = 1.0 / n
    for b in range(B):
        for i in range(n):
            for k in range(z):
                v = x[b, i, k]
                acc = 0.0
                for j in range(N):
                    d = v - mu[k, j]
                    s = w[k, j] if w[k, j] > SLOPE_MIN else SLOPE_MIN
                    if 1.0 - s * fabs(d) > 0:
                        g = gout[b, k, j] * inv_n
                        if w[k, j] > SLOPE_MIN:
                            gw[k, j] -= g * fabs(d)
                        if d > 0:
                            gmu[k, j] += g * s
                            acc -= g * s
                        elif d < 0:
                            gmu[k, j] -= g * s
                            acc += g * s
                gx[b, i, k] = acc


cdef void _bwd_rbf(double[:, :, ::1] x, double[:, ::1] mu, double[:, ::1] w,
                   double[:, :, ::1] gout, double[:, :, ::1] gx,
                   double[:, ::1] gmu, double[:, ::1] gw) noexcept nogil:
    cdef Py_ssize_t B = x.shape[0], n = x.shape[1], z = x.shape[2], N = mu.shape[1]
    cdef Py_ssize_t b, i, k, j
    cdef double v, u, g, acc, inv_n = 1.0 / n
    for b in range(B):
        for i in range(n):
            for k in range(z):
                v = x[b, i, k]
                acc = 0.0
                for j in range(N):
                    u = (v - mu[k, j]) / w[k, j]
                    g = gout[b, k, j] * inv_n * exp(-u * u) * 2.0 * u / w[k, j]
                    gmu[k, j] += g
                    gw[k, j] += g * u
                    acc -= g
                gx[b, i, k] = acc


cdef void _bwd_sigmoid(double[:, :, ::1] x, double[:, ::1] mu, double[:, ::1] w, double gamma,
                       double[:, :, ::1] gout, double[:, :, ::1] gx) noexcept nogil:
    cdef Py_ssize_t B = x.shape[0], n = x.shape[1], z = x.shape[2], N = mu.shape[1]
    cdef Py_ssize_t b, i, k, j
    cdef double v, d, a, c, acc, inv_n = 1.0 / n
    for b in range(B):
        for i in range(n):
            for k in range(z):
                v = x[b, i, k]
                acc = 0.0
                for j in range(N):
                    d = v - mu[k, j]
                    a = _expit(-gamma * (d - 0.5 * w[k, j]))
                    c = _expit(gamma * (d + 0.5 * w[k, j]))
                    acc += gout[b, k, j] * inv_n * gamma * a * c * (a - c)
                gx[b, i, k] = acc


def hist_backward(double[:, :, ::1] x, double[:, ::1] mu, double[:, ::1] w,
                  int variant, double gamma, double[:, :, ::1] gout):
    cdef Py_ssize_t B = x.shape[0], n = x.shape[1], z = x.shape[2], N = mu.shape[1]
    if variant < 0 or variant > 3:
        raise ValueError(f"unknown variant {variant}")
    gx_arr = np.zeros((B, n, z), dtype=np.float64)
    gmu_arr = np.zeros((z, N), dtype=np.float64)
    gw_arr = np.zeros((z, N), dtype=np.float64)
    cdef double[:, :, ::1] gx = gx_arr
    cdef double[:, ::1] gmu = gmu_arr
    cdef double[:, ::1] gw = gw_arr
    with nogil:
        if variant == 0:
            _bwd_hard(x, mu, w, gout, gx, gmu, gw)
        elif variant == 1:
            _bwd_soft(x, mu, w, gout, gx, gmu, gw)
        elif variant == 2:
            _bwd_rbf(x, mu, w, gout, gx, gmu, gw)
        else:
            _bwd_sigmoid(x, mu, w, gamma, gout, gx)
    return gx_arr, gmu_arr, gw_arr
