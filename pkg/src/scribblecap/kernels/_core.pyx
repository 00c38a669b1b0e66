# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled row-wise kernels; signature-compatible with ``_numpy``.

Single-pass loops over small rows beat numpy's temporaries at desk scale,
where per-call overhead dominates. Accumulation is in double for both
dtypes; results agree with the numpy backend to normal float tolerance.
"""

import numpy as np

from libc.math cimport exp, log, pow, sqrt, tanh

ctypedef fused floating:
    float
    double

cdef double _SQRT_2_OVER_PI = 0.7978845608028654
cdef double _GELU_C = 0.044715


cdef inline object _dtype_of(floating x):
    if floating is float:
        return np.float32
    return np.float64


def layernorm_forward(const floating[:, ::1] x, const floating[::1] gamma, const floating[::1] beta, double eps):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    dtype = np.float32 if floating is float else np.float64
    y_arr = np.empty((n, d), dtype=dtype)
    mean_arr = np.empty(n, dtype=dtype)
    rstd_arr = np.empty(n, dtype=dtype)
    cdef floating[:, ::1] y = y_arr
    cdef floating[::1] mean = mean_arr
    cdef floating[::1] rstd = rstd_arr
    cdef Py_ssize_t i, j
    cdef double mu, var, rs, xv
    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            xv = x[i, j] - mu
            var += xv * xv
        var /= d
        rs = 1.0 / sqrt(var + eps)
        mean[i] = <floating> mu
        rstd[i] = <floating> rs
        for j in range(d):
            y[i, j] = <floating> (((x[i, j] - mu) * rs) * gamma[j] + beta[j])
    return y_arr, mean_arr, rstd_arr


def layernorm_backward(const floating[:, ::1] dy, const floating[:, ::1] x, const floating[::1] gamma,
                       const floating[::1] mean, const floating[::1] rstd):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    dtype = np.float32 if floating is float else np.float64
    dx_arr = np.empty((n, d), dtype=dtype)
    dgamma_arr = np.zeros(d, dtype=dtype)
    dbeta_arr = np.zeros(d, dtype=dtype)
    cdef floating[:, ::1] dx = dx_arr
    cdef floating[::1] dgamma = dgamma_arr
    cdef floating[::1] dbeta = dbeta_arr
    cdef Py_ssize_t i, j
    cdef double m1, m2, xhat, dxh, mu, rs
    for i in range(n):
        mu = mean[i]
        rs = rstd[i]
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            xhat = (x[i, j] - mu) * rs
            dxh = dy[i, j] * gamma[j]
            dgamma[j] += <floating> (dy[i, j] * xhat)
            dbeta[j] += dy[i, j]
            m1 += dxh
            m2 += dxh * xhat
        m1 /= d
        m2 /= d
        for j in range(d):
            xhat = (x[i, j] - mu) * rs
            dxh = dy[i, j] * gamma[j]
            dx[i, j] = <floating> (rs * (dxh - m1 - xhat * m2))
    return dx_arr, dgamma_arr, dbeta_arr


def softmax_rows(const floating[:, ::1] scores):
    cdef Py_ssize_t n = scores.shape[0], d = scores.shape[1]
    dtype = np.float32 if floating is float else np.float64
    probs_arr = np.empty((n, d), dtype=dtype)
    cdef floating[:, ::1] probs = probs_arr
    cdef Py_ssize_t i, j
    cdef double mx, z, e
    for i in range(n):
        mx = scores[i, 0]
        for j in range(1, d):
            if scores[i, j] > mx:
                mx = scores[i, j]
        z = 0.0
        for j in range(d):
            e = exp(scores[i, j] - mx)
            probs[i, j] = <floating> e
            z += e
        for j in range(d):
            probs[i, j] = <floating> (probs[i, j] / z)
    return probs_arr


def softmax_rows_backward(const floating[:, ::1] dprobs, const floating[:, ::1] probs):
    cdef Py_ssize_t n = probs.shape[0], d = probs.shape[1]
    dtype = np.float32 if floating is float else np.float64
    ds_arr = np.empty((n, d), dtype=dtype)
    cdef floating[:, ::1] ds = ds_arr
    cdef Py_ssize_t i, j
    cdef double inner
    for i in range(n):
        inner = 0.0
        for j in range(d):
            inner += dprobs[i, j] * probs[i, j]
        for j in range(d):
            ds[i, j] = <floating> (probs[i, j] * (dprobs[i, j] - inner))
    return ds_arr


def gelu_forward(const floating[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    dtype = np.float32 if floating is float else np.float64
    y_arr = np.empty((n, d), dtype=dtype)
    cdef floating[:, ::1] y = y_arr
    cdef Py_ssize_t i, j
    cdef double v, u
    for i in range(n):
        for j in range(d):
            v = x[i, j]
            u = _SQRT_2_OVER_PI * (v + _GELU_C * v * v * v)
            y[i, j] = <floating> (0.5 * v * (1.0 + tanh(u)))
    return y_arr


def gelu_backward(const floating[:, ::1] dy, const floating[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    dtype = np.float32 if floating is float else np.float64
    dx_arr = np.empty((n, d), dtype=dtype)
    cdef floating[:, ::1] dx = dx_arr
    cdef Py_ssize_t i, j
    cdef double v, u, t, du, dydx
    for i in range(n):
        for j in range(d):
            v = x[i, j]
            u = _SQRT_2_OVER_PI * (v + _GELU_C * v * v * v)
            t = tanh(u)
            du = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * v * v)
            dydx = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du
            dx[i, j] = <floating> (dy[i, j] * dydx)
    return dx_arr


def cross_entropy_rows(const floating[:, ::1] logits, const long[::1] targets):
    cdef Py_ssize_t n = logits.shape[0], d = logits.shape[1]
    dtype = np.float32 if floating is float else np.float64
    losses_arr = np.empty(n, dtype=dtype)
    probs_arr = np.empty((n, d), dtype=dtype)
    cdef floating[::1] losses = losses_arr
    cdef floating[:, ::1] probs = probs_arr
    cdef Py_ssize_t i, j
    cdef double mx, z, e
    for i in range(n):
        mx = logits[i, 0]
        for j in range(1, d):
            if logits[i, j] > mx:
                mx = logits[i, j]
        z = 0.0
        for j in range(d):
            e = exp(logits[i, j] - mx)
            probs[i, j] = <floating> e
            z += e
        for j in range(d):
            probs[i, j] = <floating> (probs[i, j] / z)
        losses[i] = <floating> (log(z) - (logits[i, targets[i]] - mx))
    return losses_arr, probs_arr


def cross_entropy_backward(const floating[:, ::1] probs, const long[::1] targets, const floating[::1] dlosses):
    cdef Py_ssize_t n = probs.shape[0], d = probs.shape[1]
    dtype = np.float32 if floating is float else np.float64
    dl_arr = np.empty((n, d), dtype=dtype)
    cdef floating[:, ::1] dl = dl_arr
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(d):
            dl[i, j] = <floating> (probs[i, j] * dlosses[i])
        dl[i, targets[i]] -= dlosses[i]
    return dl_arr


def adam_update(floating[::1] param, const floating[::1] grad, floating[::1] m, floating[::1] v,
                long t, double lr, double beta1, double beta2, double eps):
    cdef Py_ssize_t n = param.shape[0]
    cdef Py_ssize_t i
    cdef double bc1 = 1.0 - pow(beta1, t)
    cdef double bc2 = 1.0 - pow(beta2, t)
    cdef double g, mi, vi
    for i in range(n):
        g = grad[i]
        mi = beta1 * m[i] + (1.0 - beta1) * g
        vi = beta2 * v[i] + (1.0 - beta2) * g * g
        m[i] = <floating> mi
        v[i] = <floating> vi
        param[i] -= <floating> (lr * (mi / bc1) / (sqrt(vi / bc2) + eps))
