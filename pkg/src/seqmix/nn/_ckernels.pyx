# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels for the hot non-BLAS ops (layer norm, softmax,
cross-entropy, relu). Same formulas as kernels_py; see that module for the
reference numerics."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, sqrt

cnp.import_array()

ctypedef fused floating:
    float
    double


def _empty_like2(floating[:, ::1] x, Py_ssize_t rows, Py_ssize_t cols):
    if floating is float:
        return np.empty((rows, cols), dtype=np.float32)
    else:
        return np.empty((rows, cols), dtype=np.float64)


def _empty_like1(floating[:, ::1] x, Py_ssize_t n):
    if floating is float:
        return np.empty(n, dtype=np.float32)
    else:
        return np.empty(n, dtype=np.float64)


def layernorm_fwd(floating[:, ::1] x, floating[::1] gamma, floating[::1] beta, double eps):
    cdef Py_ssize_t m = x.shape[0], d = x.shape[1]
    y_arr = _empty_like2(x, m, d)
    mean_arr = _empty_like1(x, m)
    rstd_arr = _empty_like1(x, m)
    cdef floating[:, ::1] y = y_arr
    cdef floating[::1] mean = mean_arr
    cdef floating[::1] rstd = rstd_arr
    cdef Py_ssize_t i, j
    cdef double acc, mu, var, dev, rs
    with nogil:
        for i in range(m):
            acc = 0.0
            for j in range(d):
                acc += x[i, j]
            mu = acc / d
            var = 0.0
            for j in range(d):
                dev = x[i, j] - mu
                var += dev * dev
            var /= d
            rs = 1.0 / sqrt(var + eps)
            mean[i] = <floating> mu
            rstd[i] = <floating> rs
            for j in range(d):
                y[i, j] = <floating> ((x[i, j] - mu) * rs) * gamma[j] + beta[j]
    return y_arr, mean_arr, rstd_arr


def layernorm_bwd(floating[:, ::1] dy, floating[:, ::1] x, floating[::1] gamma,
                  floating[::1] mean, floating[::1] rstd):
    cdef Py_ssize_t m = dy.shape[0], d = dy.shape[1]
    dx_arr = _empty_like2(dy, m, d)
    dgamma_arr = _empty_like1(dy, d)
    dbeta_arr = _empty_like1(dy, d)
    cdef floating[:, ::1] dx = dx_arr
    cdef floating[::1] dgamma = dgamma_arr
    cdef floating[::1] dbeta = dbeta_arr
    cdef Py_ssize_t i, j
    cdef double m1, m2, xhat, dxhat, rs, mu
    with nogil:
        for j in range(d):
            dgamma[j] = 0.0
            dbeta[j] = 0.0
        for i in range(m):
            mu = mean[i]
            rs = rstd[i]
            m1 = 0.0
            m2 = 0.0
            for j in range(d):
                xhat = (x[i, j] - mu) * rs
                dxhat = dy[i, j] * gamma[j]
                dgamma[j] += <floating> (dy[i, j] * xhat)
                dbeta[j] += dy[i, j]
                m1 += dxhat
                m2 += dxhat * xhat
            m1 /= d
            m2 /= d
            for j in range(d):
                xhat = (x[i, j] - mu) * rs
                dxhat = dy[i, j] * gamma[j]
                dx[i, j] = <floating> ((dxhat - m1 - xhat * m2) * rs)
    return dx_arr, dgamma_arr, dbeta_arr


def softmax_fwd(floating[:, ::1] x):
    cdef Py_ssize_t m = x.shape[0], d = x.shape[1]
    y_arr = _empty_like2(x, m, d)
    cdef floating[:, ::1] y = y_arr
    cdef Py_ssize_t i, j
    cdef double mx, acc
    with nogil:
        for i in range(m):
            mx = x[i, 0]
            for j in range(1, d):
                if x[i, j] > mx:
                    mx = x[i, j]
            acc = 0.0
            for j in range(d):
                y[i, j] = <floating> exp(x[i, j] - mx)
                acc += y[i, j]
            for j in range(d):
                y[i, j] = <floating> (y[i, j] / acc)
    return y_arr


def softmax_bwd(floating[:, ::1] dy, floating[:, ::1] y):
    cdef Py_ssize_t m = dy.shape[0], d = dy.shape[1]
    dx_arr = _empty_like2(dy, m, d)
    cdef floating[:, ::1] dx = dx_arr
    cdef Py_ssize_t i, j
    cdef double inner
    with nogil:
        for i in range(m):
            inner = 0.0
            for j in range(d):
                inner += dy[i, j] * y[i, j]
            for j in range(d):
                dx[i, j] = <floating> (y[i, j] * (dy[i, j] - inner))
    return dx_arr


def softmax_xent_fwd(floating[:, ::1] logits, long[::1] labels):
    cdef Py_ssize_t m = logits.shape[0], d = logits.shape[1]
    losses_arr = _empty_like1(logits, m)
    probs_arr = _empty_like2(logits, m, d)
    cdef floating[::1] losses = losses_arr
    cdef floating[:, ::1] probs = probs_arr
    cdef Py_ssize_t i, j
    cdef double mx, acc, shifted
    with nogil:
        for i in range(m):
            mx = logits[i, 0]
            for j in range(1, d):
                if logits[i, j] > mx:
                    mx = logits[i, j]
            acc = 0.0
            for j in range(d):
                probs[i, j] = <floating> exp(logits[i, j] - mx)
                acc += probs[i, j]
            for j in range(d):
                probs[i, j] = <floating> (probs[i, j] / acc)
            shifted = logits[i, labels[i]] - mx
            losses[i] = <floating> (log(acc) - shifted)
    return losses_arr, probs_arr


def softmax_xent_bwd(floating[:, ::1] probs, long[::1] labels, floating[::1] dlosses):
    cdef Py_ssize_t m = probs.shape[0], d = probs.shape[1]
    dlogits_arr = _empty_like2(probs, m, d)
    cdef floating[:, ::1] dlogits = dlogits_arr
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(m):
            for j in range(d):
                dlogits[i, j] = probs[i, j] * dlosses[i]
            dlogits[i, labels[i]] -= dlosses[i]
    return dlogits_arr


def relu_fwd(floating[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0] * x.shape[1]
    y_arr = _empty_like2(x, x.shape[0], x.shape[1])
    cdef floating[:, ::1] y = y_arr
    cdef floating* px = &x[0, 0]
    cdef floating* py = &y[0, 0]
    cdef Py_ssize_t i
    with nogil:
        # multiply-by-mask keeps the loop branch-free (random signs would
        # otherwise cost a mispredict per element)
        for i in range(n):
            py[i] = px[i] * (px[i] > 0)
    return y_arr


def relu_bwd(floating[:, ::1] dy, floating[:, ::1] x):
    cdef Py_ssize_t n = dy.shape[0] * dy.shape[1]
    dx_arr = _empty_like2(dy, dy.shape[0], dy.shape[1])
    cdef floating[:, ::1] dx = dx_arr
    cdef floating* pdy = &dy[0, 0]
    cdef floating* px = &x[0, 0]
    cdef floating* pdx = &dx[0, 0]
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            pdx[i] = pdy[i] * (px[i] > 0)
    return dx_arr
