"""Query transformer: learnable queries + point word tokens over image features.

The sequence [Z; embed(W)] runs through blocks of bidirectional
self-attention, cross-attention to the patch features, and a GELU
feed-forward, each with post-norm residuals. A final linear projection
emits [Ẑ; Ŵ]; rows split at index N. Only Ẑ feeds the language model, so
the backward pass takes an upstream gradient on Ẑ alone.

Also houses the frozen visual encoder: a per-cell (color, shape,
occupancy, position) encoding pushed through a fixed seeded random
projection. Its parameters are created once from the seed and never
updated; patch position is baked into the features, so the transformer
has no separate patch-position table.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import layers as L
from .data import SyntheticImage, SynthConfig
from .points import point_vocab


class QFormerError(ValueError):
    pass


@dataclass(frozen=True)
class QFormerConfig:
    n_queries: int = 8
    width: int = 32           # d_q, transformer width
    d_visual: int = 32        # d_v, patch feature width
    d_out: int = 32           # d, LM embedding width for Ẑ
    n_layers: int = 2
    n_heads: int = 2
    ff_mult: int = 4
    max_point_tokens: int = 64
    dtype: str = "float32"    # float64 for finite-difference verification

    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_json(self) -> dict:
        return {"n_queries": self.n_queries, "width": self.width,
                "d_visual": self.d_visual, "d_out": self.d_out,
                "n_layers": self.n_layers, "n_heads": self.n_heads,
                "ff_mult": self.ff_mult, "max_point_tokens": self.max_point_tokens,
                "dtype": self.dtype}

    @classmethod
    def from_json(cls, obj: dict) -> "QFormerConfig":
        return cls(**obj)


def init_qformer_params(cfg: QFormerConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    dt = cfg.np_dtype()
    p: dict[str, np.ndarray] = {}
    p["queries"] = (rng.standard_normal((cfg.n_queries, cfg.width)) * 0.02).astype(dt)
    p["tok_emb"] = (rng.standard_normal((point_vocab().size, cfg.width)) * 0.02).astype(dt)
    # order within the point segment ("[32 64]" vs "[64 32]") is invisible
    # to bidirectional attention without positions
    p["pos_emb"] = (rng.standard_normal((cfg.max_point_tokens, cfg.width)) * 0.02).astype(dt)
    for i in range(cfg.n_layers):
        pre = f"blocks.{i}"
        for name, d_in in (("wq", cfg.width), ("wk", cfg.width), ("wv", cfg.width), ("wo", cfg.width)):
            p[f"{pre}.sa.{name}"], p[f"{pre}.sa.b{name[1]}"] = L.init_linear(rng, d_in, cfg.width, dt)
        for name, d_in in (("wq", cfg.width), ("wk", cfg.d_visual), ("wv", cfg.d_visual), ("wo", cfg.width)):
            p[f"{pre}.ca.{name}"], p[f"{pre}.ca.b{name[1]}"] = L.init_linear(rng, d_in, cfg.width, dt)
        hidden = cfg.ff_mult * cfg.width
        p[f"{pre}.ff.w1"], p[f"{pre}.ff.b1"] = L.init_linear(rng, cfg.width, hidden, dt)
        p[f"{pre}.ff.w2"], p[f"{pre}.ff.b2"] = L.init_linear(rng, hidden, cfg.width, dt)
        for ln in ("ln1", "ln2", "ln3"):
            p[f"{pre}.{ln}.g"] = np.ones(cfg.width, dtype=dt)
            p[f"{pre}.{ln}.b"] = np.zeros(cfg.width, dtype=dt)
    p["out.w"], p["out.b"] = L.init_linear(rng, cfg.width, cfg.d_out, dt)
    return p


@dataclass
class QFormerOutput:
    z_hat: np.ndarray                 # (N, d_out)
    w_hat: np.ndarray                 # (L, d_out)
    self_attn: list[np.ndarray]       # per layer (heads, N+L, N+L)
    cross_attn: list[np.ndarray]      # per layer (heads, N+L, P)
    patch_dims: tuple[int, int]


def qformer_forward(params: dict[str, np.ndarray], cfg: QFormerConfig,
                    point_token_ids, features: "ImageFeatures"):
    """Run the query transformer; returns (QFormerOutput, cache)."""
    ids = np.asarray(point_token_ids, dtype=np.int64)
    if ids.ndim != 1:
        raise QFormerError(f"point token ids must be 1-D, got shape {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= params["tok_emb"].shape[0]):
        raise QFormerError(f"point token id out of range 0..{params['tok_emb'].shape[0] - 1}")
    if ids.size > cfg.max_point_tokens:
        raise QFormerError(f"{ids.size} point tokens exceed limit {cfg.max_point_tokens}")
    feats = features.grid
    if feats.ndim != 2 or feats.shape[1] != cfg.d_visual:
        raise QFormerError(f"features must be (P, {cfg.d_visual}), got {feats.shape}")

    n, l = cfg.n_queries, ids.size
    x = np.concatenate([params["queries"],
                        params["tok_emb"][ids] + params["pos_emb"][:l]], axis=0)

    caches = []
    self_maps, cross_maps = [], []
    for i in range(cfg.n_layers):
        pre = f"blocks.{i}"
        sa_out, sa_cache = L.attention_forward(x, x, params, f"{pre}.sa", cfg.n_heads)
        h1, ln1_cache = L.layernorm_forward(x + sa_out, params, f"{pre}.ln1")
        ca_out, ca_cache = L.attention_forward(h1, feats, params, f"{pre}.ca", cfg.n_heads)
        h2, ln2_cache = L.layernorm_forward(h1 + ca_out, params, f"{pre}.ln2")
        ff_out, ff_cache = L.ff_forward(h2, params, f"{pre}.ff")
        x, ln3_cache = L.layernorm_forward(h2 + ff_out, params, f"{pre}.ln3")
        caches.append((sa_cache, ln1_cache, ca_cache, ln2_cache, ff_cache, ln3_cache))
        self_maps.append(sa_cache["probs"])
        cross_maps.append(ca_cache["probs"])

    seq_out = x @ params["out.w"] + params["out.b"]
    out = QFormerOutput(z_hat=seq_out[:n], w_hat=seq_out[n:],
                        self_attn=self_maps, cross_attn=cross_maps,
                        patch_dims=features.patch_dims)
    cache = {"ids": ids, "x_final": x, "block_caches": caches, "n": n, "l": l, "cfg": cfg}
    return out, cache


def qformer_backward(params: dict[str, np.ndarray], cache: dict,
                     d_z_hat: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients for every parameter given the upstream gradient on Ẑ.

    Ŵ is unused downstream, so its upstream gradient is identically zero.
    The gradient w.r.t. the image features is computed as a by-product and
    discarded (the visual encoder is frozen).
    """
    cfg: QFormerConfig = cache["cfg"]
    n, l = cache["n"], cache["l"]
    if d_z_hat.shape != (n, cfg.d_out):
        raise QFormerError(f"upstream gradient shape {d_z_hat.shape}, expected {(n, cfg.d_out)}")
    grads = L.zero_grads_like(params)

    d_seq = np.zeros((n + l, cfg.d_out), dtype=d_z_hat.dtype)
    d_seq[:n] = d_z_hat
    grads["out.w"] += cache["x_final"].T @ d_seq
    grads["out.b"] += d_seq.sum(axis=0)
    dx = d_seq @ params["out.w"].T

    for i in reversed(range(cfg.n_layers)):
        pre = f"blocks.{i}"
        sa_cache, ln1_cache, ca_cache, ln2_cache, ff_cache, ln3_cache = cache["block_caches"][i]
        dh2_plus = L.layernorm_backward(dx, ln3_cache, grads, f"{pre}.ln3")
        dh2 = dh2_plus + L.ff_backward(dh2_plus, ff_cache, grads)
        dh1_plus = L.layernorm_backward(dh2, ln2_cache, grads, f"{pre}.ln2")
        d_ca_q, _d_feats = L.attention_backward(dh1_plus, ca_cache, grads)
        dh1 = dh1_plus + d_ca_q
        dx_plus = L.layernorm_backward(dh1, ln1_cache, grads, f"{pre}.ln1")
        d_sa_q, d_sa_kv = L.attention_backward(dx_plus, sa_cache, grads)
        dx = dx_plus + d_sa_q + d_sa_kv

    grads["queries"] += dx[:n]
    ids = cache["ids"]
    if l:
        np.add.at(grads["tok_emb"], ids, dx[n:])
        grads["pos_emb"][:l] += dx[n:]
    return grads


def cross_attention_map(output: QFormerOutput, layer: Optional[int] = None,
                        head: Optional[int] = None) -> np.ndarray:
    """Query→patch attention (N, P), averaged over unselected layers/heads."""
    n_layers = len(output.cross_attn)
    if not n_layers:
        raise QFormerError("no attention record present")
    if layer is not None and not (0 <= layer < n_layers):
        raise QFormerError(f"layer {layer} out of range 0..{n_layers - 1}")
    maps = output.cross_attn if layer is None else [output.cross_attn[layer]]
    n_heads = maps[0].shape[0]
    if head is not None and not (0 <= head < n_heads):
        raise QFormerError(f"head {head} out of range 0..{n_heads - 1}")
    n = output.z_hat.shape[0]
    stacked = np.stack([m[head] if head is not None else m.mean(axis=0) for m in maps])
    return stacked.mean(axis=0)[:n]


# --------------------------------------------------------------------------
# Frozen visual encoder


@dataclass
class ImageFeatures:
    grid: np.ndarray                # (H_p * W_p, d_v)
    patch_dims: tuple[int, int]

    def __post_init__(self):
        h, w = self.patch_dims
        if self.grid.shape[0] != h * w:
            raise QFormerError(f"{self.grid.shape[0]} patch rows for dims {self.patch_dims}")


class VisualEncoder:
    """Frozen featurizer for synthetic grid images.

    Per cell: one-hot color, one-hot shape, occupancy flag, one-hot row,
    one-hot col — projected to d_v by a random matrix drawn once from
    `seed`. Position must be one-hot, not scalar: attention scores are
    linear in the key features, and a scalar (row, col) only supports
    planar score ramps, which peak at grid corners — interior cells would
    be unselectable. The weight array is locked read-only after
    construction.
    """

    def __init__(self, synth: SynthConfig, d_visual: int, seed: int = 7151, dtype: str = "float32"):
        self.synth = synth
        self.d_visual = d_visual
        self.seed = seed
        self.dtype = dtype
        self.raw_dim = len(synth.colors) + len(synth.shapes) + 1 + 2 * synth.grid
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((self.raw_dim, d_visual)) / np.sqrt(self.raw_dim)
        self.weight = w.astype(np.dtype(dtype))
        self.weight.setflags(write=False)
        self._color_index = {c: i for i, c in enumerate(synth.colors)}
        self._shape_index = {s: i for i, s in enumerate(synth.shapes)}

    @classmethod
    def from_weight(cls, synth: SynthConfig, d_visual: int, seed: int,
                    dtype: str, weight: np.ndarray) -> "VisualEncoder":
        enc = cls(synth, d_visual, seed=seed, dtype=dtype)
        if weight.shape != enc.weight.shape:
            raise QFormerError(f"visual weight shape {weight.shape}, "
                               f"expected {enc.weight.shape}")
        w = np.ascontiguousarray(weight, dtype=np.dtype(dtype))
        w.setflags(write=False)
        enc.weight = w
        return enc

    def checksum(self) -> str:
        return hashlib.sha256(self.weight.tobytes()).hexdigest()

    def encode(self, image: SyntheticImage) -> ImageFeatures:
        g = self.synth.grid
        nc, ns = len(self.synth.colors), len(self.synth.shapes)
        raw = np.zeros((g * g, self.raw_dim), dtype=self.weight.dtype)
        for r in range(g):
            for c in range(g):
                idx = r * g + c
                raw[idx, nc + ns + 1 + r] = 1.0
                raw[idx, nc + ns + 1 + g + c] = 1.0
        for obj in image.objects:
            ci, si = self._color_index[obj.color], self._shape_index[obj.shape]
            for (r, c) in obj.cells:
                idx = r * g + c
                raw[idx, ci] = 1.0
                raw[idx, nc + si] = 1.0
                raw[idx, nc + ns] = 1.0
        return ImageFeatures(grid=raw @ self.weight, patch_dims=(g, g))
