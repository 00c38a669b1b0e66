"""Reference numpy implementations of the hot row-wise kernels.

Shapes are 2-D (rows x features) throughout; dtype (float32/float64) is
preserved. The compiled backend in ``_core.pyx`` mirrors these signatures
exactly; this module is the fallback and the numerical reference.
"""

from __future__ import annotations

import numpy as np

_SQRT_2_OVER_PI = 0.7978845608028654  # sqrt(2/pi)
_GELU_C = 0.044715


def layernorm_forward(x, gamma, beta, eps):
    mean = x.mean(axis=1)
    var = x.var(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[:, None]) * rstd[:, None]
    y = xhat * gamma[None, :] + beta[None, :]
    return y.astype(x.dtype, copy=False), mean.astype(x.dtype, copy=False), rstd.astype(x.dtype, copy=False)


def layernorm_backward(dy, x, gamma, mean, rstd):
    xhat = (x - mean[:, None]) * rstd[:, None]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma[None, :]
    # dx = rstd * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = rstd[:, None] * (dxhat - m1 - xhat * m2)
    return dx.astype(x.dtype, copy=False), dgamma.astype(x.dtype, copy=False), dbeta.astype(x.dtype, copy=False)


def softmax_rows(scores):
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return (e / e.sum(axis=1, keepdims=True)).astype(scores.dtype, copy=False)


def softmax_rows_backward(dprobs, probs):
    inner = (dprobs * probs).sum(axis=1, keepdims=True)
    return (probs * (dprobs - inner)).astype(probs.dtype, copy=False)


def gelu_forward(x):
    u = _SQRT_2_OVER_PI * (x + _GELU_C * x * x * x)
    return (0.5 * x * (1.0 + np.tanh(u))).astype(x.dtype, copy=False)


def gelu_backward(dy, x):
    u = _SQRT_2_OVER_PI * (x + _GELU_C * x * x * x)
    t = np.tanh(u)
    du = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * x * x)
    dydx = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
    return (dy * dydx).astype(x.dtype, copy=False)


def cross_entropy_rows(logits, targets):
    """Per-row -log softmax(logits)[target]; also returns the softmax rows."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    z = e.sum(axis=1, keepdims=True)
    probs = (e / z).astype(logits.dtype, copy=False)
    rows = np.arange(logits.shape[0])
    losses = (np.log(z[:, 0]) - shifted[rows, targets]).astype(logits.dtype, copy=False)
    return losses, probs


def cross_entropy_backward(probs, targets, dlosses):
    dlogits = probs * dlosses[:, None]
    rows = np.arange(probs.shape[0])
    dlogits[rows, targets] -= dlosses
    return dlogits.astype(probs.dtype, copy=False)


def adam_update(param, grad, m, v, t, lr, beta1, beta2, eps):
    """One Adam step, in place on param/m/v (1-D contiguous views)."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    param -= lr * mhat / (np.sqrt(vhat) + eps)
