"""Zero-shot procedures over a trained model.

Region captioning, referring-segmentation proposal selection with mIoU,
four-choice visual commonsense prompts, template VQA, multi-turn dialogue,
and the mask-dilation robustness harness. Every operation is read-only on
the model; determinism comes from caller-supplied RNGs (evaluators derive
per-instance seeds from content, so instance order never matters).
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .checkpoint import Model
from .data import SyntheticDataset, SyntheticImage
from .lm import Prompt, SoftSegment, TextSegment, lm_generate, lm_loss
from .masks import MaskProposal, dilate_mask, rle_decode, rle_encode
from .points import Scribble, encode_points, sample_points, sample_points_in_mask, tokenize_points
from .qformer import QFormerOutput, qformer_forward
from .seeding import derive_rng


class TaskError(ValueError):
    pass


_PLACEHOLDER_RE = re.compile(r"\[(\d+)\]")


# --------------------------------------------------------------------------
# Instances


@dataclass
class RISInstance:
    """One referring-segmentation case: pick the proposal matching Y."""

    instance_id: str
    image: SyntheticImage
    proposals: list[MaskProposal]
    description: str
    gt_mask: Optional[np.ndarray] = None
    correct_index: Optional[int] = None

    def __post_init__(self):
        if not self.proposals:
            raise TaskError(f"{self.instance_id}: needs at least one proposal")


@dataclass
class VCRInstance:
    """A question with [k] placeholders over indexed object masks and 4 choices."""

    instance_id: str
    image: SyntheticImage
    object_masks: list[np.ndarray]
    question: str
    choices: tuple[str, str, str, str]
    answer: Optional[int] = None  # 1..4 when labeled

    def __post_init__(self):
        if len(self.choices) != 4:
            raise TaskError(f"{self.instance_id}: exactly 4 choices required, "
                            f"got {len(self.choices)}")
        for k in placeholder_indices(self.question):
            if k >= len(self.object_masks):
                raise TaskError(f"{self.instance_id}: placeholder [{k}] has no object")


@dataclass
class VQAInstance:
    """A global question about the image; answer is free text when labeled."""

    instance_id: str
    image: SyntheticImage
    question: str
    answer: Optional[str] = None


@dataclass
class DialogueTurn:
    role: str                      # "user" or "model"
    text: str
    scribble: Optional[Scribble] = None
    z_hat: Optional[np.ndarray] = None


@dataclass
class DialogueState:
    turns: list[DialogueTurn] = field(default_factory=list)
    truncated: bool = False

    def __post_init__(self):
        for prev, cur in zip(self.turns, self.turns[1:]):
            if prev.role == cur.role:
                raise TaskError("dialogue turns must alternate roles")


def placeholder_indices(text: str) -> list[int]:
    return [int(m) for m in _PLACEHOLDER_RE.findall(text)]


# --------------------------------------------------------------------------
# Region encoding and captioning


def region_output(model: Model, image: SyntheticImage,
                  scribble: Optional[Scribble], k: int,
                  rng: np.random.Generator) -> QFormerOutput:
    """Ẑ (plus attention record) for a region indication; empty/None = global."""
    if scribble is None or scribble.is_empty:
        token_ids: list[int] = []
    else:
        token_ids = tokenize_points(encode_points(sample_points(scribble, k, rng)))
    feats = model.visual.encode(image)
    out, _ = qformer_forward(model.qf_params, model.qf_cfg, token_ids, feats)
    return out


def mask_output(model: Model, image: SyntheticImage, mask: np.ndarray, k: int,
                rng: np.random.Generator) -> QFormerOutput:
    """Ẑ for a region given as a binary mask (points sampled inside it)."""
    scribble = sample_points_in_mask(mask, k, rng)
    token_ids = tokenize_points(encode_points(scribble))
    feats = model.visual.encode(image)
    out, _ = qformer_forward(model.qf_params, model.qf_cfg, token_ids, feats)
    return out


def caption_region(model: Model, image: SyntheticImage,
                   scribble: Optional[Scribble], k: int,
                   rng: np.random.Generator, max_len: int = 16) -> str:
    """Greedy region caption; empty scribble describes the whole image."""
    out = region_output(model, image, scribble, k, rng)
    prompt = Prompt((SoftSegment(out.z_hat, "region"),))
    ids = lm_generate(model.lm, prompt, max_len=max_len, eos_id=model.vocab.eos_id)
    return model.vocab.decode(ids)


# --------------------------------------------------------------------------
# Referring image segmentation


def ris_score(model: Model, image: SyntheticImage, proposal: MaskProposal,
              description: str, k: int, rng: np.random.Generator) -> float:
    """LM loss of the description under the proposal's region prompt.

    Lower = better match. Empty proposals score +inf and are thereby
    excluded from selection.
    """
    if proposal.is_empty:
        return math.inf
    out = mask_output(model, image, proposal.grid, k, rng)
    target = model.vocab.encode(description) + [model.vocab.eos_id]
    loss, _ = lm_loss(model.lm, Prompt((SoftSegment(out.z_hat, "region"),)), target)
    return loss


def ris_select(model: Model, instance: RISInstance, k: int,
               rng: np.random.Generator) -> tuple[int, list[float]]:
    """Index of the minimum-loss proposal (ties -> lowest index) plus scores."""
    scores = [ris_score(model, instance.image, prop, instance.description, k, rng)
              for prop in instance.proposals]
    if not any(math.isfinite(s) for s in scores):
        raise TaskError(f"{instance.instance_id}: no usable (non-empty) proposal")
    best = min(range(len(scores)), key=lambda i: (scores[i], i))
    return best, scores


def compute_miou(predictions: Sequence[np.ndarray],
                 ground_truths: Sequence[np.ndarray]) -> float:
    """Mean IoU over pairs; a pair of two empty masks counts as 1.0."""
    if len(predictions) != len(ground_truths):
        raise TaskError(f"{len(predictions)} predictions vs "
                        f"{len(ground_truths)} ground truths")
    if not predictions:
        raise TaskError("cannot average over zero instances")
    total = 0.0
    for i, (pred, gt) in enumerate(zip(predictions, ground_truths)):
        a = np.asarray(pred, dtype=bool)
        b = np.asarray(gt, dtype=bool)
        if a.shape != b.shape:
            raise TaskError(f"pair {i}: mask grids {a.shape} vs {b.shape}")
        union = np.logical_or(a, b).sum()
        if union == 0:
            total += 1.0
        else:
            total += float(np.logical_and(a, b).sum()) / float(union)
    return total / len(predictions)


def evaluate_ris(model: Model, instances: Sequence[RISInstance], k: int,
                 base_seed: int) -> dict:
    """Selection accuracy (when labeled) and mIoU (when ground truth given)."""
    if not instances:
        raise TaskError("no instances to evaluate")
    records = []
    preds, gts = [], []
    correct = labeled = 0
    for inst in instances:
        rng = derive_rng(base_seed, inst.instance_id)
        best, scores = ris_select(model, inst, k, rng)
        rec = {"instance_id": inst.instance_id, "selected": best,
               "scores": [round(s, 6) if math.isfinite(s) else None for s in scores]}
        if inst.correct_index is not None:
            labeled += 1
            correct += int(best == inst.correct_index)
            rec["correct"] = inst.correct_index
        if inst.gt_mask is not None:
            preds.append(instance_prediction(inst, best))
            gts.append(inst.gt_mask)
        records.append(rec)
    out = {"n": len(instances), "records": records}
    if labeled:
        out["selection_accuracy"] = correct / labeled
    if preds:
        out["miou"] = compute_miou(preds, gts)
    return out


def instance_prediction(instance: RISInstance, index: int) -> np.ndarray:
    return instance.proposals[index].grid


def robustness_report(model: Model, instances: Sequence[RISInstance],
                      radii: Sequence[int], k: int, base_seed: int) -> list[dict]:
    """Radius -> mIoU rows, ascending radius; proposals dilated per radius.

    The selected (dilated) proposal is the prediction, so fatter proposals
    both perturb the sampled points and dilute the overlap — a noisy-scribble
    stress protocol at grid scale.
    """
    if not instances:
        raise TaskError("no instances to evaluate")
    for inst in instances:
        if inst.gt_mask is None:
            raise TaskError(f"{inst.instance_id}: robustness needs ground truth")
    rows = []
    for radius in sorted(set(int(r) for r in radii)):
        if radius < 0:
            raise TaskError(f"radius must be non-negative, got {radius}")
        preds, gts = [], []
        for inst in instances:
            fat = [MaskProposal(p.image_id, dilate_mask(p.grid, radius), p.provenance)
                   for p in inst.proposals]
            fat_inst = replace(inst, proposals=fat)
            rng = derive_rng(base_seed, inst.instance_id, str(radius))
            best, _ = ris_select(model, fat_inst, k, rng)
            preds.append(fat[best].grid)
            gts.append(inst.gt_mask)
        rows.append({"radius": radius, "miou": compute_miou(preds, gts)})
    return rows


# --------------------------------------------------------------------------
# VCR


def vcr_prompt(vocab, z_list: Sequence[np.ndarray], question: str,
               choices: Sequence[str]) -> Prompt:
    """"[0]: Ẑ_0 [1]: Ẑ_1 … <question> 1. … 2. …" as interleaved segments."""
    for k in placeholder_indices(question):
        if k >= len(z_list):
            raise TaskError(f"question references [{k}] but only "
                            f"{len(z_list)} objects are given")
    prompt = Prompt()
    for idx, z in enumerate(z_list):
        tag = f"[{idx}]:"
        prompt = prompt.append(TextSegment(tuple(vocab.encode(tag)), tag))
        prompt = prompt.append(SoftSegment(np.asarray(z), f"object-{idx}"))
    listing = " ".join(f"{i + 1}. {c}" for i, c in enumerate(choices))
    text = f"{question} {listing}" if choices else question
    prompt = prompt.append(TextSegment(tuple(vocab.encode(text)), text))
    return prompt


def vcr_answer(model: Model, instance: VCRInstance, k: int,
               rng: np.random.Generator) -> tuple[int, list[float]]:
    """1-based index of the minimum mean-token-loss choice, plus all 4 losses."""
    z_list = [mask_output(model, instance.image, m, k, rng).z_hat
              for m in instance.object_masks]
    prompt = vcr_prompt(model.vocab, z_list, instance.question, instance.choices)
    scores = []
    for choice in instance.choices:
        target = model.vocab.encode(choice) + [model.vocab.eos_id]
        loss, _ = lm_loss(model.lm, prompt, target)
        scores.append(loss)
    best = min(range(4), key=lambda i: (scores[i], i))
    return best + 1, scores


def evaluate_vcr(model: Model, instances: Sequence[VCRInstance], k: int,
                 base_seed: int) -> dict:
    if not instances:
        raise TaskError("no instances to evaluate")
    records = []
    correct = labeled = 0
    for inst in instances:
        rng = derive_rng(base_seed, inst.instance_id)
        best, scores = vcr_answer(model, inst, k, rng)
        rec = {"instance_id": inst.instance_id, "answer": best,
               "scores": [round(s, 6) for s in scores]}
        if inst.answer is not None:
            labeled += 1
            correct += int(best == inst.answer)
            rec["label"] = inst.answer
        records.append(rec)
    out = {"n": len(instances), "records": records}
    if labeled:
        out["accuracy"] = correct / labeled
    return out


# --------------------------------------------------------------------------
# VQA


def vqa_prompt(vocab, z_global: np.ndarray, question: str) -> Prompt:
    """Global region rows + the fixed "Question: {} Answer:" template."""
    text = f"Question: {question} Answer:"
    return Prompt((SoftSegment(np.asarray(z_global), "global"),
                   TextSegment(tuple(vocab.encode(text)), text)))


def vqa_answer(model: Model, image: SyntheticImage, question: str,
               max_len: int = 8) -> str:
    """Template VQA with the empty region indication (zero point tokens)."""
    feats = model.visual.encode(image)
    token_ids: list[int] = []
    assert len(token_ids) == 0  # VQA always runs with the empty scribble
    out, _ = qformer_forward(model.qf_params, model.qf_cfg, token_ids, feats)
    prompt = vqa_prompt(model.vocab, out.z_hat, question)
    ids = lm_generate(model.lm, prompt, max_len=max_len, eos_id=model.vocab.eos_id)
    return model.vocab.decode(ids)


def evaluate_vqa(model: Model, instances: Sequence[VQAInstance]) -> dict:
    """Template runs over labeled/unlabeled questions. Free-text answers are
    scored two ways: exact string match and answer-word containment (the
    model tends to reply with a full caption, e.g. "red circle" for "red")."""
    records = []
    labeled = exact = contains = 0
    for inst in instances:
        text = vqa_answer(model, inst.image, inst.question)
        rec = {"instance_id": inst.instance_id, "question": inst.question,
               "generated": text}
        if inst.answer is not None:
            labeled += 1
            exact += int(text == inst.answer)
            contains += int(inst.answer in text.split())
            rec["label"] = inst.answer
        records.append(rec)
    out = {"n": len(instances), "records": records}
    if labeled:
        out["exact_accuracy"] = exact / labeled
        out["contains_accuracy"] = contains / labeled
    return out


# --------------------------------------------------------------------------
# Dialogue


def _dialogue_prompt(model: Model, turns: Sequence[DialogueTurn],
                     query_text: str, query_z: Optional[np.ndarray]):
    """Soft segments newest-first, then the serialized history and query."""
    prompt = Prompt()
    if query_z is not None:
        prompt = prompt.append(SoftSegment(query_z, "turn-current"))
    for i in range(len(turns) - 1, -1, -1):
        if turns[i].z_hat is not None:
            prompt = prompt.append(SoftSegment(turns[i].z_hat, f"turn-{i}"))
    lines = [f"{t.role}: {t.text}" for t in turns]
    lines.append(f"user: {query_text} model:")
    text = " ".join(lines)
    return prompt.append(TextSegment(tuple(model.vocab.encode(text)), text))


def _prompt_rows(model: Model, prompt: Prompt) -> int:
    rows = 1  # leading bos
    for seg in prompt.segments:
        rows += len(seg)
    return rows


def dialogue_step(model: Model, image: SyntheticImage, state: DialogueState,
                  user_text: str, scribble: Optional[Scribble], k: int,
                  rng: np.random.Generator,
                  max_len: int = 16) -> tuple[str, DialogueState]:
    """One exchange: returns the reply and a state extended by two turns.

    The full history stays in the returned state (the client owns it); when
    the assembled prompt would overflow the LM context, the oldest turns
    are dropped from the prompt only, and the returned state carries
    ``truncated=True`` for that step.
    """
    query_z = None
    if scribble is not None:
        query_z = region_output(model, image, scribble, k, rng).z_hat

    turns = list(state.turns)
    budget = model.lm.cfg.max_seq_len - max_len
    visible = turns
    truncated = False
    while True:
        prompt = _dialogue_prompt(model, visible, user_text, query_z)
        if _prompt_rows(model, prompt) <= budget or not visible:
            break
        visible = visible[1:]
        truncated = True
    if _prompt_rows(model, prompt) > budget:
        raise TaskError("query alone exceeds the language model context")

    ids = lm_generate(model.lm, prompt, max_len=max_len, eos_id=model.vocab.eos_id)
    reply = model.vocab.decode(ids)
    new_turns = turns + [DialogueTurn("user", user_text, scribble, query_z),
                         DialogueTurn("model", reply)]
    return reply, DialogueState(new_turns, truncated=truncated)


# --------------------------------------------------------------------------
# Synthetic instance generation


def make_ris_instances(dataset: SyntheticDataset, n: int,
                       rng: np.random.Generator) -> list[RISInstance]:
    """RIS cases from multi-object images: proposals are the object masks
    (shuffled), the description names one of them."""
    pool = [img for img in dataset.images.values() if len(img.objects) >= 2]
    if not pool:
        raise TaskError("dataset has no multi-object images")
    instances = []
    for i in range(n):
        image = pool[int(rng.integers(0, len(pool)))]
        target = int(rng.integers(0, len(image.objects)))
        order = rng.permutation(len(image.objects))
        proposals = [MaskProposal(image.image_id, image.object_mask(int(j)),
                                  provenance="synthetic-object")
                     for j in order]
        correct = int(np.nonzero(order == target)[0][0])
        instances.append(RISInstance(
            instance_id=f"ris-{i:04d}-{image.image_id}",
            image=image, proposals=proposals,
            description=image.objects[target].caption,
            gt_mask=image.object_mask(target),
            correct_index=correct))
    return instances


def make_vcr_instances(dataset: SyntheticDataset, n: int,
                       rng: np.random.Generator) -> list[VCRInstance]:
    """Four-way "what is [k]" questions; distractors are other type captions."""
    all_captions = sorted({f"{c} {s}" for c in dataset.config.colors
                           for s in dataset.config.shapes})
    images = list(dataset.images.values())
    if not images:
        raise TaskError("dataset has no images")
    instances = []
    for i in range(n):
        image = images[int(rng.integers(0, len(images)))]
        masks = [image.object_mask(j) for j in range(len(image.objects))]
        target = int(rng.integers(0, len(image.objects)))
        truth = image.objects[target].caption
        distractors = [c for c in all_captions if c != truth]
        picks = rng.choice(len(distractors), size=3, replace=False)
        choices = [truth] + [distractors[int(p)] for p in picks]
        order = rng.permutation(4)
        shuffled = tuple(choices[int(j)] for j in order)
        answer = int(np.nonzero(order == 0)[0][0]) + 1
        instances.append(VCRInstance(
            instance_id=f"vcr-{i:04d}-{image.image_id}",
            image=image, object_masks=masks,
            question=f"what is [{target}]",
            choices=shuffled, answer=answer))
    return instances


def make_vqa_instances(dataset: SyntheticDataset, n: int,
                       rng: np.random.Generator) -> list[VQAInstance]:
    """Color questions about shapes that appear exactly once in their image,
    so each question has a single well-defined answer."""
    pool = []
    for image in dataset.images.values():
        shapes = [o.shape for o in image.objects]
        for obj in image.objects:
            if shapes.count(obj.shape) == 1:
                pool.append((image, obj))
    if not pool:
        raise TaskError("dataset has no unambiguous shape questions")
    instances = []
    for i in range(n):
        image, obj = pool[int(rng.integers(0, len(pool)))]
        instances.append(VQAInstance(
            instance_id=f"vqa-{i:04d}-{image.image_id}",
            image=image,
            question=f"what color is the {obj.shape}",
            answer=obj.color))
    return instances


# --------------------------------------------------------------------------
# Line-delimited instance files (masks as run-length codes)


def _mask_to_json(mask: np.ndarray) -> dict:
    return {"rle": rle_encode(mask), "dims": list(mask.shape)}


def _mask_from_json(obj: dict) -> np.ndarray:
    return rle_decode(list(obj["rle"]), tuple(obj["dims"]))


def save_ris_instances(path: str, instances: Sequence[RISInstance]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            rec = {"instance_id": inst.instance_id,
                   "image_id": inst.image.image_id,
                   "description": inst.description,
                   "proposals": [dict(_mask_to_json(p.grid), provenance=p.provenance)
                                 for p in inst.proposals],
                   "gt": _mask_to_json(inst.gt_mask) if inst.gt_mask is not None else None,
                   "correct_index": inst.correct_index}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_ris_instances(path: str, images: dict[str, SyntheticImage]) -> list[RISInstance]:
    instances = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                image = images[rec["image_id"]]
                instances.append(RISInstance(
                    instance_id=rec["instance_id"], image=image,
                    proposals=[MaskProposal(image.image_id, _mask_from_json(p),
                                            provenance=p.get("provenance", "file"))
                               for p in rec["proposals"]],
                    description=rec["description"],
                    gt_mask=_mask_from_json(rec["gt"]) if rec.get("gt") else None,
                    correct_index=rec.get("correct_index")))
            except (KeyError, ValueError, TypeError) as exc:
                raise TaskError(f"{path}:{lineno}: bad RIS record: {exc}") from exc
    return instances


def save_vcr_instances(path: str, instances: Sequence[VCRInstance]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            rec = {"instance_id": inst.instance_id,
                   "image_id": inst.image.image_id,
                   "object_masks": [_mask_to_json(m) for m in inst.object_masks],
                   "question": inst.question,
                   "choices": list(inst.choices),
                   "answer": inst.answer}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_vcr_instances(path: str, images: dict[str, SyntheticImage]) -> list[VCRInstance]:
    instances = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                image = images[rec["image_id"]]
                instances.append(VCRInstance(
                    instance_id=rec["instance_id"], image=image,
                    object_masks=[_mask_from_json(m) for m in rec["object_masks"]],
                    question=rec["question"],
                    choices=tuple(rec["choices"]),
                    answer=rec.get("answer")))
            except (KeyError, ValueError, TypeError) as exc:
                raise TaskError(f"{path}:{lineno}: bad VCR record: {exc}") from exc
    return instances


def save_vqa_instances(path: str, instances: Sequence[VQAInstance]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            rec = {"instance_id": inst.instance_id,
                   "image_id": inst.image.image_id,
                   "question": inst.question,
                   "answer": inst.answer}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_vqa_instances(path: str, images: dict[str, SyntheticImage]) -> list[VQAInstance]:
    instances = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                instances.append(VQAInstance(
                    instance_id=rec["instance_id"],
                    image=images[rec["image_id"]],
                    question=rec["question"],
                    answer=rec.get("answer")))
            except (KeyError, ValueError, TypeError) as exc:
                raise TaskError(f"{path}:{lineno}: bad VQA record: {exc}") from exc
    return instances


def save_proposals(path: str, proposals: Sequence[MaskProposal]) -> None:
    """Standalone proposal file: image id, index within image, RLE, dims."""
    counters: dict[str, int] = {}
    with open(path, "w", encoding="utf-8") as fh:
        for prop in proposals:
            idx = counters.get(prop.image_id, 0)
            counters[prop.image_id] = idx + 1
            rec = dict(_mask_to_json(prop.grid), image_id=prop.image_id,
                       index=idx, provenance=prop.provenance)
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_proposals(path: str) -> dict[str, list[MaskProposal]]:
    out: dict[str, list[MaskProposal]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                prop = MaskProposal(rec["image_id"], _mask_from_json(rec),
                                    provenance=rec.get("provenance", "file"))
            except (KeyError, ValueError, TypeError) as exc:
                raise TaskError(f"{path}:{lineno}: bad proposal record: {exc}") from exc
            out.setdefault(rec["image_id"], []).append(prop)
    return out
