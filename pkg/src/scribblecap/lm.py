"""Tiny frozen causal decoder consuming soft prompts.

The model is a GPT-style decoder (tied input/output embeddings, learned
positions, post-norm blocks, final layer-norm) small enough to train on
caption text in seconds. After :meth:`FrozenLM.seal` its arrays are locked
read-only and checksummed; downstream code only ever asks it for losses,
generations, and gradients with respect to the *input rows* — parameter
gradients are never materialized after sealing (backward passes run with
the gradient store disabled, not zeroed).

Prompts are ordered segments: text (token ids, embedded through the LM
table) or soft (raw embedding rows such as Ẑ).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from . import kernels
from . import layers as L


class LMError(ValueError):
    pass


class ContextOverflowError(LMError):
    pass


class SealedError(RuntimeError):
    """Raised on attempts to run parameter updates on a sealed model."""


@dataclass(frozen=True)
class LMConfig:
    vocab_size: int
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 2
    ff_mult: int = 4
    max_seq_len: int = 96
    seed: int = 31337
    dtype: str = "float32"

    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_json(self) -> dict:
        return {"vocab_size": self.vocab_size, "d_model": self.d_model,
                "n_layers": self.n_layers, "n_heads": self.n_heads,
                "ff_mult": self.ff_mult, "max_seq_len": self.max_seq_len,
                "seed": self.seed, "dtype": self.dtype}

    @classmethod
    def from_json(cls, obj: dict) -> "LMConfig":
        return cls(**obj)


@dataclass(frozen=True)
class TextSegment:
    token_ids: tuple[int, ...]
    text: str

    def __len__(self) -> int:
        return len(self.token_ids)


@dataclass(frozen=True, eq=False)
class SoftSegment:
    rows: np.ndarray     # (n, d_model)
    label: str

    def __len__(self) -> int:
        return self.rows.shape[0]


Segment = Union[TextSegment, SoftSegment]


@dataclass(frozen=True, eq=False)
class Prompt:
    segments: tuple[Segment, ...] = ()

    def __len__(self) -> int:
        return sum(len(s) for s in self.segments)

    def append(self, segment: Segment) -> "Prompt":
        return Prompt(self.segments + (segment,))

    def render_text(self) -> str:
        """Human-readable serialization; soft segments appear as <label>."""
        pieces = []
        for seg in self.segments:
            pieces.append(seg.text if isinstance(seg, TextSegment) else f"<{seg.label}>")
        return " ".join(p for p in pieces if p)


def init_lm_params(cfg: LMConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    dt = cfg.np_dtype()
    p: dict[str, np.ndarray] = {}
    p["tok_emb"] = (rng.standard_normal((cfg.vocab_size, cfg.d_model)) * 0.02).astype(dt)
    p["pos_emb"] = (rng.standard_normal((cfg.max_seq_len, cfg.d_model)) * 0.02).astype(dt)
    for i in range(cfg.n_layers):
        pre = f"blocks.{i}"
        for name in ("wq", "wk", "wv", "wo"):
            p[f"{pre}.sa.{name}"], p[f"{pre}.sa.b{name[1]}"] = L.init_linear(
                rng, cfg.d_model, cfg.d_model, dt)
        hidden = cfg.ff_mult * cfg.d_model
        p[f"{pre}.ff.w1"], p[f"{pre}.ff.b1"] = L.init_linear(rng, cfg.d_model, hidden, dt)
        p[f"{pre}.ff.w2"], p[f"{pre}.ff.b2"] = L.init_linear(rng, hidden, cfg.d_model, dt)
        for ln in ("ln1", "ln2"):
            p[f"{pre}.{ln}.g"] = np.ones(cfg.d_model, dtype=dt)
            p[f"{pre}.{ln}.b"] = np.zeros(cfg.d_model, dtype=dt)
    p["ln_f.g"] = np.ones(cfg.d_model, dtype=dt)
    p["ln_f.b"] = np.zeros(cfg.d_model, dtype=dt)
    return p


class FrozenLM:
    """Causal decoder; freely trainable until sealed, read-only after."""

    BOS = 1  # shared with the point vocabulary's fixed low ids

    def __init__(self, cfg: LMConfig, params: Optional[dict[str, np.ndarray]] = None):
        self.cfg = cfg
        self.params = params if params is not None else init_lm_params(
            cfg, np.random.default_rng(cfg.seed))
        self.sealed = False
        self.seal_checksum: Optional[str] = None

    # -- frozen contract ----------------------------------------------------

    def checksum(self) -> str:
        h = hashlib.sha256()
        for key in sorted(self.params):
            h.update(key.encode())
            h.update(self.params[key].tobytes())
        return h.hexdigest()

    def seal(self) -> str:
        for a in self.params.values():
            a.setflags(write=False)
        self.sealed = True
        self.seal_checksum = self.checksum()
        return self.seal_checksum

    def assert_frozen(self) -> None:
        if not self.sealed:
            raise SealedError("model is not sealed")
        if self.checksum() != self.seal_checksum:
            raise SealedError("sealed parameters changed — frozen contract violated")

    # -- forward ------------------------------------------------------------

    def _assemble(self, prompt: Prompt, target_ids: Sequence[int]):
        """[bos; prompt rows; target rows] with positions; returns rows and spans."""
        cfg = self.cfg
        emb = self.params["tok_emb"]
        pieces = [emb[self.BOS][None, :]]
        spans: list[tuple[int, int]] = []  # per prompt segment
        pos = 1
        for seg in prompt.segments:
            if isinstance(seg, TextSegment):
                ids = np.asarray(seg.token_ids, dtype=np.int64)
                if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
                    raise LMError(f"token id out of range in segment {seg.text!r}")
                rows = emb[ids]
            else:
                rows = np.asarray(seg.rows)
                if rows.ndim != 2 or rows.shape[1] != cfg.d_model:
                    raise LMError(f"soft segment {seg.label!r} has shape {rows.shape}, "
                                  f"need (n, {cfg.d_model})")
            pieces.append(rows)
            spans.append((pos, pos + rows.shape[0]))
            pos += rows.shape[0]
        tids = np.asarray(target_ids, dtype=np.int64)
        if tids.size:
            if tids.min() < 0 or tids.max() >= cfg.vocab_size:
                raise LMError("target token id out of range")
            pieces.append(emb[tids])
        total = pos + tids.size
        if total > cfg.max_seq_len:
            raise ContextOverflowError(
                f"sequence length {total} exceeds context limit {cfg.max_seq_len}")
        x = np.concatenate(pieces, axis=0) + self.params["pos_emb"][:total]
        return x, spans, pos, tids

    def _forward(self, x: np.ndarray):
        cfg, p = self.cfg, self.params
        mask = L.causal_mask(x.shape[0], x.dtype)
        caches = []
        for i in range(cfg.n_layers):
            pre = f"blocks.{i}"
            sa_out, sa_cache = L.attention_forward(x, x, p, f"{pre}.sa", cfg.n_heads, mask=mask)
            h, ln1_cache = L.layernorm_forward(x + sa_out, p, f"{pre}.ln1")
            ff_out, ff_cache = L.ff_forward(h, p, f"{pre}.ff")
            x, ln2_cache = L.layernorm_forward(h + ff_out, p, f"{pre}.ln2")
            caches.append((sa_cache, ln1_cache, ff_cache, ln2_cache))
        h_f, lnf_cache = L.layernorm_forward(x, p, "ln_f")
        return h_f, (caches, lnf_cache)

    def _backward_rows(self, dh_f, fw_cache):
        """Input-row gradients only; the parameter store stays untouched."""
        caches, lnf_cache = fw_cache
        dx = L.layernorm_backward(dh_f, lnf_cache, None, "ln_f")
        for i in reversed(range(self.cfg.n_layers)):
            sa_cache, ln1_cache, ff_cache, ln2_cache = caches[i]
            dh_plus = L.layernorm_backward(dx, ln2_cache, None, f"blocks.{i}.ln2")
            dh = dh_plus + L.ff_backward(dh_plus, ff_cache, None)
            dx_plus = L.layernorm_backward(dh, ln1_cache, None, f"blocks.{i}.ln1")
            d_q, d_kv = L.attention_backward(dx_plus, sa_cache, None)
            dx = dx_plus + d_q + d_kv
        return dx


def lm_loss(lm: FrozenLM, prompt: Prompt, target_ids: Sequence[int]):
    """Mean cross-entropy of the target under causal decoding. -> (loss, logits)"""
    if not len(target_ids):
        raise LMError("target must be non-empty")
    x, _, prompt_end, tids = lm._assemble(prompt, target_ids)
    h_f, _ = lm._forward(x)
    t = tids.size
    logits = h_f[prompt_end - 1: prompt_end - 1 + t] @ lm.params["tok_emb"].T
    losses, _ = kernels.cross_entropy_rows(np.ascontiguousarray(logits), tids)
    return float(losses.mean()), logits


def lm_generate(lm: FrozenLM, prompt: Prompt, max_len: int,
                eos_id: Optional[int] = None) -> list[int]:
    """Greedy decode until eos or max_len; argmax ties go to the lowest id."""
    if max_len < 1:
        raise LMError(f"max_len must be >= 1, got {max_len}")
    out: list[int] = []
    for _ in range(max_len):
        x, _, prompt_end, _ = lm._assemble(prompt, out)
        h_f, _ = lm._forward(x)
        logits = h_f[-1] @ lm.params["tok_emb"].T
        nxt = int(np.argmax(logits))
        if eos_id is not None and nxt == eos_id:
            break
        out.append(nxt)
    return out


def lm_input_gradient(lm: FrozenLM, prompt: Prompt, target_ids: Sequence[int],
                      scale: float = 1.0):
    """(loss, per-segment gradients): arrays for soft segments, None for text."""
    if not len(target_ids):
        raise LMError("target must be non-empty")
    x, spans, prompt_end, tids = lm._assemble(prompt, target_ids)
    h_f, fw_cache = lm._forward(x)
    t = tids.size
    logits = h_f[prompt_end - 1: prompt_end - 1 + t] @ lm.params["tok_emb"].T
    losses, probs = kernels.cross_entropy_rows(np.ascontiguousarray(logits), tids)
    loss = float(losses.mean())

    dlosses = np.full(t, scale / t, dtype=x.dtype)
    dlogits = kernels.cross_entropy_backward(probs, tids, dlosses)
    dh_f = np.zeros_like(h_f)
    dh_f[prompt_end - 1: prompt_end - 1 + t] = dlogits @ lm.params["tok_emb"]
    dx = lm._backward_rows(dh_f, fw_cache)

    seg_grads: list[Optional[np.ndarray]] = []
    for seg, (a, b) in zip(prompt.segments, spans):
        seg_grads.append(dx[a:b].copy() if isinstance(seg, SoftSegment) else None)
    return loss, seg_grads


# --------------------------------------------------------------------------
# Warmup (pre-seal) training


def warmup_lm(lm: FrozenLM, corpora: Sequence[Sequence[int]], steps: int,
              lr: float, rng: np.random.Generator, copy_prob: float = 0.5,
              prompt_rows: int = 8, noise_std: float = 0.0,
              batch_size: int = 1) -> list[float]:
    """Teach the unsealed LM caption text plus prefix copying, then the
    caller seals it.

    ``copy_prob`` of the sampled examples prepend a soft prompt of exactly
    ``prompt_rows`` rows holding the target's own embeddings (cycled, with
    optional Gaussian noise). This rehearses the deployed interface — N
    soft rows then the caption — so the sealed model routes information
    out of that prefix slot instead of ignoring it. Remaining examples are
    plain unconditional language modeling. Each Adam step averages
    gradients over ``batch_size`` examples. Returns per-step mean losses.
    """
    if lm.sealed:
        raise SealedError("cannot warm up a sealed model")
    if not corpora:
        raise LMError("empty warmup corpus")
    if batch_size < 1:
        raise LMError("warmup batch size must be positive")
    opt = L.AdamState(lm.params, lr=lr)
    losses: list[float] = []
    for _ in range(steps):
        acc: Optional[dict[str, np.ndarray]] = None
        step_loss = 0.0
        for _b in range(batch_size):
            tids = corpora[int(rng.integers(0, len(corpora)))]
            use_copy = prompt_rows > 0 and rng.uniform() < copy_prob
            prompt = Prompt()
            if use_copy:
                idx = np.asarray([tids[i % len(tids)] for i in range(prompt_rows)],
                                 dtype=np.int64)
                rows = lm.params["tok_emb"][idx].copy()
                if noise_std > 0:
                    rows += (rng.standard_normal(rows.shape) * noise_std).astype(rows.dtype)
                prompt = Prompt((SoftSegment(rows, "copy"),))
            loss, grads = _lm_param_step(lm, prompt, tids)
            step_loss += loss
            if acc is None:
                acc = grads
            else:
                for key in acc:
                    acc[key] += grads[key]
        assert acc is not None
        if batch_size > 1:
            for key in acc:
                acc[key] /= batch_size
        L.check_finite({"loss": np.array(step_loss)}, "lm warmup")
        opt.step(lm.params, acc)
        losses.append(step_loss / batch_size)
    return losses


def _lm_param_step(lm: FrozenLM, prompt: Prompt, target_ids: Sequence[int]):
    """One full backward with parameter gradients (pre-seal only)."""
    x, _, prompt_end, tids = lm._assemble(prompt, target_ids)
    cfg, p = lm.cfg, lm.params
    grads = L.zero_grads_like(p)

    mask = L.causal_mask(x.shape[0], x.dtype)
    caches = []
    h = x
    for i in range(cfg.n_layers):
        pre = f"blocks.{i}"
        sa_out, sa_cache = L.attention_forward(h, h, p, f"{pre}.sa", cfg.n_heads, mask=mask)
        h1, ln1_cache = L.layernorm_forward(h + sa_out, p, f"{pre}.ln1")
        ff_out, ff_cache = L.ff_forward(h1, p, f"{pre}.ff")
        h, ln2_cache = L.layernorm_forward(h1 + ff_out, p, f"{pre}.ln2")
        caches.append((sa_cache, ln1_cache, ff_cache, ln2_cache))
    h_f, lnf_cache = L.layernorm_forward(h, p, "ln_f")

    t = tids.size
    logits = h_f[prompt_end - 1: prompt_end - 1 + t] @ p["tok_emb"].T
    losses, probs = kernels.cross_entropy_rows(np.ascontiguousarray(logits), tids)
    loss = float(losses.mean())

    dlogits = kernels.cross_entropy_backward(probs, tids, np.full(t, 1.0 / t, dtype=x.dtype))
    dh_f = np.zeros_like(h_f)
    dh_f[prompt_end - 1: prompt_end - 1 + t] = dlogits @ p["tok_emb"]
    grads["tok_emb"] += dlogits.T @ h_f[prompt_end - 1: prompt_end - 1 + t]  # tied head

    dx = L.layernorm_backward(dh_f, lnf_cache, grads, "ln_f")
    for i in reversed(range(cfg.n_layers)):
        sa_cache, ln1_cache, ff_cache, ln2_cache = caches[i]
        dh_plus = L.layernorm_backward(dx, ln2_cache, grads, f"blocks.{i}.ln2")
        dh = dh_plus + L.ff_backward(dh_plus, ff_cache, grads)
        dx_plus = L.layernorm_backward(dh, ln1_cache, grads, f"blocks.{i}.ln1")
        d_q, d_kv = L.attention_backward(dx_plus, sa_cache, grads)
        dx = dx_plus + d_q + d_kv

    # scatter input-row grads into the tied embedding and position tables
    grads["pos_emb"][:x.shape[0]] += dx
    grads["tok_emb"][lm.BOS] += dx[0]
    pos = 1
    for seg in prompt.segments:
        n = len(seg)
        if isinstance(seg, TextSegment) and n:
            np.add.at(grads["tok_emb"], np.asarray(seg.token_ids, dtype=np.int64), dx[pos:pos + n])
        pos += n
    if t:
        np.add.at(grads["tok_emb"], tids, dx[pos:pos + t])
    return loss, grads


def build_frozen_lm(cfg: LMConfig, corpora: Sequence[Sequence[int]],
                    warmup_steps: int, lr: float, copy_prob: float = 0.5,
                    prompt_rows: int = 8, noise_std: float = 0.0,
                    batch_size: int = 1) -> FrozenLM:
    """Initialize, warm up on encoded captions, seal. Deterministic in cfg.seed."""
    lm = FrozenLM(cfg)
    if warmup_steps:
        warmup_lm(lm, corpora, warmup_steps, lr, np.random.default_rng(cfg.seed + 1),
                  copy_prob=copy_prob, prompt_rows=prompt_rows, noise_std=noise_std,
                  batch_size=batch_size)
    lm.seal()
    return lm
