"""Training loop: optimize the query transformer against the frozen LM.

Per step, each batch item runs visual features → query transformer → soft
prompt → LM loss; the LM returns gradients on the soft prompt rows only,
which flow back through the query transformer. Adam updates query
transformer parameters exclusively — the LM is sealed and the visual
encoder weight is read-only, so the frozen contract holds by construction
and is re-verified via checksums.

Reference full-scale settings (documented, not desk defaults): 10 epochs,
learning rate 5e-6, batch size 64, K=10 sampled points, N=32 queries.
Desk-scale defaults below train a from-scratch model in minutes on a CPU.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import layers as L
from .checkpoint import Model, save_model
from .data import (
    RegionCaptionPair,
    SynthConfig,
    SyntheticDataset,
    Vocabulary,
    batches_per_epoch,
    build_vocab,
    make_synthetic_dataset,
    mixed_batch_sampler,
    regional_batch_sampler,
    split_pairs_by_image,
)
from .lm import LMConfig, Prompt, SoftSegment, build_frozen_lm, lm_input_gradient, lm_loss
from .qformer import QFormerConfig, VisualEncoder, init_qformer_params, qformer_backward, qformer_forward
from .seeding import derive_rng

# words the zero-shot prompt templates add beyond the caption vocabulary
TEMPLATE_CORPUS = "question answer what color is the shape where and a an of user model"


class TrainError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    # optimization — defaults are the measured desk-scale recipe: ~5 min on
    # one CPU core, ≥90% exact-match region captions on held-out images
    epochs: int = 20
    batch_size: int = 16
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 0.0          # 0 disables clipping
    k: int = 6                      # points sampled per scribble
    seed: int = 1234
    use_point_tokens: bool = True   # False: point-dropping ablation
    regional_only: bool = False     # diagnostic regime, no global half
    # evaluation / split
    holdout_fraction: float = 0.1
    eval_max_items: int = 128
    # vocabulary
    max_words: int = 64
    # frozen LM
    lm_d_model: int = 32
    lm_layers: int = 2
    lm_heads: int = 2
    lm_ff_mult: int = 4
    lm_max_seq_len: int = 96
    lm_seed: int = 31337
    lm_warmup_steps: int = 4000
    lm_warmup_lr: float = 3e-3
    lm_warmup_copy_prob: float = 0.75
    lm_warmup_noise: float = 0.05
    lm_warmup_batch: int = 8
    # query transformer
    n_queries: int = 8
    qf_width: int = 32
    qf_layers: int = 2
    qf_heads: int = 2
    qf_ff_mult: int = 4
    max_point_tokens: int = 64
    # visual encoder
    d_visual: int = 32
    visual_seed: int = 7151
    # synthetic dataset
    n_images: int = 2000
    grid: int = 6
    min_objects: int = 2
    max_objects: int = 4
    min_scribble_points: int = 6
    max_scribble_points: int = 14
    synth_seed: int = 97

    def __post_init__(self):
        if self.batch_size % 2 != 0 and not self.regional_only:
            raise TrainError(f"batch_size must be even, got {self.batch_size}")
        if self.k < 1:
            raise TrainError(f"k must be >= 1, got {self.k}")
        if self.lr <= 0:
            raise TrainError(f"lr must be positive, got {self.lr}")

    def synth_config(self) -> SynthConfig:
        return SynthConfig(n_images=self.n_images, grid=self.grid,
                           min_objects=self.min_objects, max_objects=self.max_objects,
                           min_scribble_points=self.min_scribble_points,
                           max_scribble_points=self.max_scribble_points,
                           seed=self.synth_seed)

    def qf_config(self) -> QFormerConfig:
        return QFormerConfig(n_queries=self.n_queries, width=self.qf_width,
                             d_visual=self.d_visual, d_out=self.lm_d_model,
                             n_layers=self.qf_layers, n_heads=self.qf_heads,
                             ff_mult=self.qf_ff_mult,
                             max_point_tokens=self.max_point_tokens)

    def lm_config(self, vocab_size: int) -> LMConfig:
        return LMConfig(vocab_size=vocab_size, d_model=self.lm_d_model,
                        n_layers=self.lm_layers, n_heads=self.lm_heads,
                        ff_mult=self.lm_ff_mult, max_seq_len=self.lm_max_seq_len,
                        seed=self.lm_seed)


def parse_train_config(text: str) -> TrainConfig:
    """Flat ``key = value`` lines; '#' comments; unknown keys rejected."""
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise TrainError(f"config line {lineno}: expected key = value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        f = fields.get(key)
        if f is None:
            raise TrainError(f"config line {lineno}: unknown key {key!r}")
        try:
            if f.type in ("int", int):
                values[key] = int(val)
            elif f.type in ("float", float):
                values[key] = float(val)
            elif f.type in ("bool", bool):
                if val.lower() not in ("true", "false"):
                    raise ValueError("must be true/false")
                values[key] = val.lower() == "true"
            else:
                values[key] = val
        except ValueError as exc:
            raise TrainError(f"config line {lineno}: bad value for {key}: {exc}") from exc
    return TrainConfig(**values)


def format_train_config(cfg: TrainConfig) -> str:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in dataclasses.fields(TrainConfig)]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------


class FeatureCache:
    """Visual features per image id; the encoder is frozen so this is safe."""

    def __init__(self, visual: VisualEncoder, dataset: SyntheticDataset):
        self.visual = visual
        self.images = dataset.images
        self._cache: dict = {}

    def get(self, image_id: str):
        feats = self._cache.get(image_id)
        if feats is None:
            feats = self.visual.encode(self.images[image_id])
            self._cache[image_id] = feats
        return feats


def _item_loss_and_grads(model_parts, item, accumulate_into, scale):
    """One batch item's loss; gradients accumulated when a store is given."""
    qf_params, qf_cfg, lm, cache = model_parts
    feats = cache.get(item.image_id)
    out, qf_cache = qformer_forward(qf_params, qf_cfg, list(item.point_token_ids), feats)
    prompt = Prompt((SoftSegment(out.z_hat, "region"),))
    if accumulate_into is None:
        loss, _ = lm_loss(lm, prompt, list(item.target_ids))
        return loss
    loss, seg_grads = lm_input_gradient(lm, prompt, list(item.target_ids), scale=scale)
    grads = qformer_backward(qf_params, qf_cache, seg_grads[0])
    for key, g in grads.items():
        accumulate_into[key] += g
    return loss


def eval_loss(qf_params, qf_cfg, lm, cache: FeatureCache, vocab: Vocabulary,
              pairs: Sequence[RegionCaptionPair], k: int, base_seed: int,
              use_point_tokens: bool = True) -> float:
    """Mean LM loss over caption pairs; per-pair seeds come from content, so
    the value is invariant to pair order."""
    if not pairs:
        raise TrainError("cannot evaluate on an empty dataset")
    from .points import encode_points, sample_points, tokenize_points

    total = 0.0
    for pair in pairs:
        if pair.is_global or not use_point_tokens:
            tokens: list[int] = []
        else:
            rng = derive_rng(base_seed, pair.image_id, pair.text)
            tokens = tokenize_points(encode_points(sample_points(pair.scribble, k, rng)))
        feats = cache.get(pair.image_id)
        out, _ = qformer_forward(qf_params, qf_cfg, tokens, feats)
        target = vocab.encode(pair.text) + [vocab.eos_id]
        loss, _ = lm_loss(lm, Prompt((SoftSegment(out.z_hat, "region"),)), target)
        total += loss
    return total / len(pairs)


@dataclass
class TrainResult:
    model: Model
    steps: int
    first_epoch_mean_loss: float
    last_epoch_mean_loss: float
    best_eval_loss: float
    final_eval_loss: float
    checkpoint_path: str
    report_path: str
    holdout_regional: list[RegionCaptionPair]
    holdout_global: list[RegionCaptionPair]


def train(cfg: TrainConfig, out_dir: str) -> TrainResult:
    """Full pipeline: data, vocab, frozen LM warmup+seal, query transformer
    optimization, per-step JSONL report, epoch + best checkpoints."""
    os.makedirs(out_dir, exist_ok=True)
    synth = cfg.synth_config()
    dataset = make_synthetic_dataset(synth)

    train_reg, hold_reg = split_pairs_by_image(dataset.regional, cfg.holdout_fraction,
                                               seed=cfg.seed)
    hold_ids = {p.image_id for p in hold_reg}
    train_glob = [p for p in dataset.global_ if p.image_id not in hold_ids]

    vocab = build_vocab(dataset.caption_corpus() + [TEMPLATE_CORPUS], cfg.max_words)
    lm_corpus = [tuple(vocab.encode(p.text)) + (vocab.eos_id,)
                 for p in train_reg + train_glob]
    lm = build_frozen_lm(cfg.lm_config(vocab.size), lm_corpus,
                         cfg.lm_warmup_steps, cfg.lm_warmup_lr,
                         copy_prob=cfg.lm_warmup_copy_prob,
                         prompt_rows=cfg.n_queries,
                         noise_std=cfg.lm_warmup_noise,
                         batch_size=cfg.lm_warmup_batch)
    visual = VisualEncoder(synth, cfg.d_visual, seed=cfg.visual_seed)
    frozen_before = {"lm": lm.checksum(), "visual": visual.checksum()}

    qf_cfg = cfg.qf_config()
    qf_params = init_qformer_params(qf_cfg, np.random.default_rng(cfg.seed))
    opt = L.AdamState(qf_params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                      eps=cfg.adam_eps)
    cache = FeatureCache(visual, dataset)

    batch_rng = np.random.default_rng(cfg.seed + 10)
    if cfg.regional_only:
        sampler = regional_batch_sampler(train_reg, cfg.batch_size, batch_rng,
                                         vocab=vocab, k=cfg.k,
                                         use_point_tokens=cfg.use_point_tokens)
    else:
        sampler = mixed_batch_sampler(train_reg, train_glob, cfg.batch_size, batch_rng,
                                      vocab=vocab, k=cfg.k,
                                      use_point_tokens=cfg.use_point_tokens)
    steps_per_epoch = batches_per_epoch(len(train_reg), cfg.batch_size)

    eval_pairs = hold_reg[:cfg.eval_max_items]
    model = Model(synth=synth, vocab=vocab, visual=visual,
                  qf_cfg=qf_cfg, qf_params=qf_params, lm=lm)
    parts = (qf_params, qf_cfg, lm, cache)

    report_path = os.path.join(out_dir, "train_report.jsonl")
    best_path = os.path.join(out_dir, "best.ckpt")
    final_path = os.path.join(out_dir, "model.ckpt")
    best_eval = float("inf")
    epoch_losses: list[list[float]] = []
    step = 0
    with open(report_path, "w", encoding="utf-8") as report:
        for epoch in range(cfg.epochs):
            losses_this_epoch: list[float] = []
            for _ in range(steps_per_epoch):
                batch = next(sampler)
                grads = L.zero_grads_like(qf_params)
                scale = 1.0 / len(batch)
                reg_losses, glob_losses = [], []
                for item in batch.items:
                    loss = _item_loss_and_grads(parts, item, grads, scale)
                    (reg_losses if item.origin == "regional" else glob_losses).append(loss)
                all_losses = reg_losses + glob_losses
                mean_loss = float(np.mean(all_losses))
                if not np.isfinite(mean_loss):
                    raise TrainError(
                        f"non-finite loss at step {step} (epoch {epoch}): "
                        f"regional={reg_losses} global={glob_losses}")
                gnorm = L.grad_global_norm(grads)
                if cfg.grad_clip > 0 and gnorm > cfg.grad_clip:
                    factor = cfg.grad_clip / gnorm
                    for g in grads.values():
                        g *= factor
                opt.step(qf_params, grads)
                record = {"step": step, "loss": round(mean_loss, 6),
                          "loss_regional": round(float(np.mean(reg_losses)), 6) if reg_losses else None,
                          "loss_global": round(float(np.mean(glob_losses)), 6) if glob_losses else None,
                          "grad_norm": round(gnorm, 6)}
                report.write(json.dumps(record, sort_keys=True) + "\n")
                losses_this_epoch.append(mean_loss)
                step += 1
            epoch_losses.append(losses_this_epoch)
            ev = eval_loss(qf_params, qf_cfg, lm, cache, vocab, eval_pairs,
                           cfg.k, cfg.seed, cfg.use_point_tokens)
            save_model(model, os.path.join(out_dir, f"epoch-{epoch:03d}.ckpt"))
            if ev < best_eval:
                best_eval = ev
                save_model(model, best_path)

    frozen_after = {"lm": lm.checksum(), "visual": visual.checksum()}
    if frozen_after != frozen_before:
        raise TrainError("frozen component checksum changed during training")

    save_model(model, final_path)
    final_eval = eval_loss(qf_params, qf_cfg, lm, cache, vocab, eval_pairs,
                           cfg.k, cfg.seed, cfg.use_point_tokens)
    hold_glob = [p for p in dataset.global_ if p.image_id in hold_ids]
    return TrainResult(
        model=model, steps=step,
        first_epoch_mean_loss=float(np.mean(epoch_losses[0])),
        last_epoch_mean_loss=float(np.mean(epoch_losses[-1])),
        best_eval_loss=best_eval, final_eval_loss=final_eval,
        checkpoint_path=final_path, report_path=report_path,
        holdout_regional=hold_reg, holdout_global=hold_glob)
