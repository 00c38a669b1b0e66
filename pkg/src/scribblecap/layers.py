"""Manual forward/backward building blocks over numpy arrays.

Parameters live in flat dicts keyed like ``"blocks.0.sa.wq"``; forward
functions return ``(out, cache)`` and backward functions consume the cache
and accumulate parameter gradients into a dict with the same keys. Matmuls
stay in numpy (BLAS); the row-wise pieces go through
:mod:`scribblecap.kernels` so the compiled backend can take them.

Passing ``grads=None`` to a backward skips every parameter-gradient
computation; only input gradients are produced. The frozen LM relies on
this to never materialize parameter gradients after sealing.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from . import kernels

LN_EPS = 1e-5


def init_linear(rng: np.random.Generator, d_in: int, d_out: int, dtype) -> tuple[np.ndarray, np.ndarray]:
    w = (rng.standard_normal((d_in, d_out)) * 0.02).astype(dtype)
    b = np.zeros(d_out, dtype=dtype)
    return w, b


def _contig(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a)


def linear_forward(x, w, b):
    return x @ w + b, (x, w)


def linear_backward(dy, cache, grads, wkey, bkey):
    x, w = cache
    if grads is not None:
        grads[wkey] += x.T @ dy
        grads[bkey] += dy.sum(axis=0)
    return dy @ w.T


def layernorm_forward(x, p, prefix):
    g, b = p[prefix + ".g"], p[prefix + ".b"]
    y, mean, rstd = kernels.layernorm_forward(_contig(x), g, b, LN_EPS)
    return y, (x, g, mean, rstd)


def layernorm_backward(dy, cache, grads, prefix):
    x, g, mean, rstd = cache
    dx, dg, db = kernels.layernorm_backward(_contig(dy), _contig(x), g, mean, rstd)
    if grads is not None:
        grads[prefix + ".g"] += dg
        grads[prefix + ".b"] += db
    return dx


def attention_forward(x_q, x_kv, p, prefix, n_heads, mask=None):
    """Multi-head attention of ``x_q`` over ``x_kv``.

    ``mask`` is an additive (Tq, Tk) score offset (use a large negative
    number to forbid a link). Returns the per-head attention probabilities
    in the cache under ``probs`` with shape (heads, Tq, Tk).
    """
    d_model = p[prefix + ".wq"].shape[1]
    if d_model % n_heads != 0:
        raise ValueError(f"{n_heads} heads do not divide model width {d_model}")
    hd = d_model // n_heads
    tq, tk = x_q.shape[0], x_kv.shape[0]

    q = x_q @ p[prefix + ".wq"] + p[prefix + ".bq"]
    k = x_kv @ p[prefix + ".wk"] + p[prefix + ".bk"]
    v = x_kv @ p[prefix + ".wv"] + p[prefix + ".bv"]
    qh = q.reshape(tq, n_heads, hd).transpose(1, 0, 2)
    kh = k.reshape(tk, n_heads, hd).transpose(1, 0, 2)
    vh = v.reshape(tk, n_heads, hd).transpose(1, 0, 2)

    scores = (qh @ kh.transpose(0, 2, 1)) * (1.0 / math.sqrt(hd))
    if mask is not None:
        scores = scores + mask[None, :, :]
    probs = kernels.softmax_rows(_contig(scores.reshape(n_heads * tq, tk))).reshape(n_heads, tq, tk)
    ctx = probs @ vh
    merged = ctx.transpose(1, 0, 2).reshape(tq, d_model)
    y = merged @ p[prefix + ".wo"] + p[prefix + ".bo"]
    cache = {"x_q": x_q, "x_kv": x_kv, "qh": qh, "kh": kh, "vh": vh,
             "probs": probs, "merged": merged, "p": p, "prefix": prefix, "n_heads": n_heads}
    return y, cache


def attention_backward(dy, cache, grads):
    p, prefix = cache["p"], cache["prefix"]
    n_heads = cache["n_heads"]
    qh, kh, vh, probs = cache["qh"], cache["kh"], cache["vh"], cache["probs"]
    tq, tk = qh.shape[1], kh.shape[1]
    hd = qh.shape[2]
    d_model = n_heads * hd

    if grads is not None:
        grads[prefix + ".wo"] += cache["merged"].T @ dy
        grads[prefix + ".bo"] += dy.sum(axis=0)
    dmerged = dy @ p[prefix + ".wo"].T
    dctx = dmerged.reshape(tq, n_heads, hd).transpose(1, 0, 2)

    dprobs = dctx @ vh.transpose(0, 2, 1)
    dvh = probs.transpose(0, 2, 1) @ dctx
    dscores = kernels.softmax_rows_backward(
        _contig(dprobs.reshape(n_heads * tq, tk)),
        _contig(probs.reshape(n_heads * tq, tk)),
    ).reshape(n_heads, tq, tk) * (1.0 / math.sqrt(hd))
    dqh = dscores @ kh
    dkh = dscores.transpose(0, 2, 1) @ qh

    dq = dqh.transpose(1, 0, 2).reshape(tq, d_model)
    dk = dkh.transpose(1, 0, 2).reshape(tk, d_model)
    dv = dvh.transpose(1, 0, 2).reshape(tk, d_model)

    x_q, x_kv = cache["x_q"], cache["x_kv"]
    if grads is not None:
        grads[prefix + ".wq"] += x_q.T @ dq
        grads[prefix + ".bq"] += dq.sum(axis=0)
        grads[prefix + ".wk"] += x_kv.T @ dk
        grads[prefix + ".bk"] += dk.sum(axis=0)
        grads[prefix + ".wv"] += x_kv.T @ dv
        grads[prefix + ".bv"] += dv.sum(axis=0)
    dx_q = dq @ p[prefix + ".wq"].T
    dx_kv = dk @ p[prefix + ".wk"].T + dv @ p[prefix + ".wv"].T
    return dx_q, dx_kv


def ff_forward(x, p, prefix):
    h = x @ p[prefix + ".w1"] + p[prefix + ".b1"]
    a = kernels.gelu_forward(_contig(h))
    y = a @ p[prefix + ".w2"] + p[prefix + ".b2"]
    return y, (x, h, a, p, prefix)


def ff_backward(dy, cache, grads):
    x, h, a, p, prefix = cache
    if grads is not None:
        grads[prefix + ".w2"] += a.T @ dy
        grads[prefix + ".b2"] += dy.sum(axis=0)
    da = dy @ p[prefix + ".w2"].T
    dh = kernels.gelu_backward(_contig(da), _contig(h))
    if grads is not None:
        grads[prefix + ".w1"] += x.T @ dh
        grads[prefix + ".b1"] += dh.sum(axis=0)
    return dh @ p[prefix + ".w1"].T


def zero_grads_like(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def causal_mask(n: int, dtype) -> np.ndarray:
    """Additive mask forbidding attention to later positions."""
    m = np.zeros((n, n), dtype=dtype)
    m[np.triu_indices(n, k=1)] = -1e30
    return m


def grad_global_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float((g.astype(np.float64) ** 2).sum())
    return math.sqrt(total)


class AdamState:
    """Adam moments per parameter; update order follows sorted keys."""

    def __init__(self, params: dict[str, np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for key in sorted(params):
            p = params[key].reshape(-1)
            g = np.ascontiguousarray(grads[key].reshape(-1))
            kernels.adam_update(p, g, self.m[key].reshape(-1), self.v[key].reshape(-1),
                                self.t, self.lr, self.beta1, self.beta2, self.eps)


def check_finite(arrays: dict[str, np.ndarray], context: str) -> None:
    for key, a in arrays.items():
        if not np.all(np.isfinite(a)):
            raise FloatingPointError(f"non-finite values in {key} during {context}")
