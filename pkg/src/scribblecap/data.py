"""Narrative ingestion, caption/trace alignment, vocabulary, synthetic data.

The canonical narrative record is one JSON object per line:

    {"image_id": str, "caption": str,
     "utterances": [{"span": [int, int], "time": [float, float]}, ...],
     "trace": [{"x": float, "y": float, "t": float}, ...]}

Utterance spans are half-open character offsets into the caption and must
be ordered and non-overlapping; trace timestamps are non-decreasing.
"""

from __future__ import annotations

import itertools
import json
import re
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .points import (
    Point2D,
    PointTokenVocab,
    Scribble,
    encode_points,
    point_vocab,
    sample_points,
    sample_points_in_bbox,
    tokenize_points,
)


class NarrativeParseError(ValueError):
    pass


class VocabError(ValueError):
    pass


class BatchConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Utterance:
    span: tuple[int, int]
    time: tuple[float, float]


@dataclass(frozen=True)
class TracePoint:
    point: Point2D
    t: float


@dataclass(frozen=True)
class NarrativeRecord:
    image_id: str
    caption: str
    utterances: tuple[Utterance, ...]
    trace: tuple[TracePoint, ...]

    def __post_init__(self):
        prev_end = None
        for u in self.utterances:
            s, e = u.span
            if not (0 <= s < e <= len(self.caption)):
                raise NarrativeParseError(
                    f"utterance span {u.span} outside caption of length {len(self.caption)}"
                )
            if prev_end is not None and s < prev_end:
                raise NarrativeParseError(f"utterance span {u.span} overlaps previous span")
            prev_end = e
        times = [tp.t for tp in self.trace]
        if any(b < a for a, b in zip(times, times[1:])):
            raise NarrativeParseError("trace timestamps must be non-decreasing")


@dataclass(frozen=True)
class RegionCaptionPair:
    """One training example: a scribble and the caption segment it grounds.

    An empty scribble is only legal for global (whole-image) pairs.
    """

    image_id: str
    scribble: Scribble
    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("pair text must be non-empty")

    @property
    def is_global(self) -> bool:
        return self.scribble.is_empty


@dataclass
class ParseResult:
    records: list[NarrativeRecord] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[NarrativeRecord]:
        return iter(self.records)


def _record_from_json(obj: dict) -> NarrativeRecord:
    try:
        utterances = tuple(
            Utterance(span=(int(u["span"][0]), int(u["span"][1])),
                      time=(float(u["time"][0]), float(u["time"][1])))
            for u in obj["utterances"]
        )
        trace = tuple(
            TracePoint(point=Point2D(float(p["x"]), float(p["y"])), t=float(p["t"]))
            for p in obj["trace"]
        )
        return NarrativeRecord(
            image_id=str(obj["image_id"]),
            caption=str(obj["caption"]),
            utterances=utterances,
            trace=trace,
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise NarrativeParseError(f"bad record field: {exc}") from exc


def parse_narratives(stream: Iterable[str], strict: bool = True) -> ParseResult:
    """Parse line-delimited narrative records.

    In strict mode the first invalid line raises, naming its 1-based line
    number; in lenient mode invalid lines are skipped and reported in
    ``result.warnings``.
    """
    result = ParseResult()
    for lineno, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise NarrativeParseError("record is not an object")
            result.records.append(_record_from_json(obj))
        except (json.JSONDecodeError, NarrativeParseError, ValueError) as exc:
            message = f"line {lineno}: {exc}"
            if strict:
                raise NarrativeParseError(message) from exc
            result.warnings.append(message)
    return result


_DELIMS = ".,"


def split_caption(caption: str) -> list[tuple[str, tuple[int, int]]]:
    """Split a caption on periods and commas into trimmed segments.

    Returns (text, span) with spans indexing the original caption so that
    ``caption[span[0]:span[1]] == text``. Empty segments are dropped.
    """
    segments = []
    start = 0
    for i, ch in enumerate(itertools.chain(caption, _DELIMS[0])):
        if ch in _DELIMS:
            raw = caption[start:i]
            trimmed = raw.strip()
            if trimmed:
                lead = len(raw) - len(raw.lstrip())
                segments.append((trimmed, (start + lead, start + lead + len(trimmed))))
            start = i + 1
    return segments


@dataclass
class AlignResult:
    pairs: list[RegionCaptionPair]
    dropped_segments: int


def align_segments_to_trace(record: NarrativeRecord) -> AlignResult:
    """Join caption segments to trace points via utterance time intervals.

    A segment's time window is the union of the time intervals of the
    utterances its character span overlaps; its scribble is every trace
    point whose timestamp falls inside that window (half-open). Segments
    that catch no trace points are dropped and counted.
    """
    pairs: list[RegionCaptionPair] = []
    dropped = 0
    for text, (s, e) in split_caption(record.caption):
        windows = [u.time for u in record.utterances if max(s, u.span[0]) < min(e, u.span[1])]
        picked = [tp for tp in record.trace
                  if any(t0 <= tp.t < t1 for t0, t1 in windows)]
        if not picked:
            dropped += 1
            continue
        scribble = Scribble(points=tuple(tp.point for tp in picked),
                            timestamps=tuple(tp.t for tp in picked))
        pairs.append(RegionCaptionPair(record.image_id, scribble, text))
    return AlignResult(pairs, dropped)


def pairs_from_bboxes(
    image_id: str,
    boxed_captions: Sequence[tuple[Sequence[float], str]],
    k: int,
    rng: np.random.Generator,
) -> list[RegionCaptionPair]:
    """One pair per box, with K points sampled uniformly inside the box."""
    pairs = []
    for box, text in boxed_captions:
        try:
            scribble = sample_points_in_bbox(box, k, rng)
        except ValueError as exc:
            warnings.warn(f"skipping box {list(box)} for {image_id!r}: {exc}", stacklevel=2)
            continue
        pairs.append(RegionCaptionPair(image_id, scribble, text))
    return pairs


# --------------------------------------------------------------------------
# Vocabulary


_WORD_RE = re.compile(r"\[|\]|\d+|[a-z]+")


class Vocabulary:
    """Word-token ids layered on top of the point-token id space.

    Ids 0..105 belong to the point vocabulary (specials, brackets, integer
    literals); unk sits right above it and word ids follow. Digit runs in
    text always map to integer-literal ids, never to word ids, so the two
    id spaces stay disjoint.
    """

    def __init__(self, words: Sequence[str], points: Optional[PointTokenVocab] = None):
        self.points = points or point_vocab()
        self.unk_id = self.points.size
        self._words = list(words)
        self._word_to_id = {}
        for i, w in enumerate(self._words):
            if w in self._word_to_id:
                raise VocabError(f"duplicate word {w!r}")
            if w.isdigit() or w in ("[", "]"):
                raise VocabError(f"word {w!r} collides with the point-token space")
            self._word_to_id[w] = self.unk_id + 1 + i

    @property
    def pad_id(self) -> int:
        return self.points.PAD

    @property
    def bos_id(self) -> int:
        return self.points.BOS

    @property
    def eos_id(self) -> int:
        return self.points.EOS

    @property
    def size(self) -> int:
        return self.unk_id + 1 + len(self._words)

    @property
    def words(self) -> list[str]:
        return list(self._words)

    def word_id(self, word: str) -> int:
        return self._word_to_id.get(word, self.unk_id)

    def encode(self, text: str) -> list[int]:
        """Lowercase, split on words/digits/brackets, map to ids (unk fallback)."""
        ids = []
        for tok in _WORD_RE.findall(text.lower()):
            if tok == "[":
                ids.append(self.points.LBRACKET)
            elif tok == "]":
                ids.append(self.points.RBRACKET)
            elif tok.isdigit():
                v = int(tok)
                ids.append(self.points.literal_id(v) if v <= 100 else self.unk_id)
            else:
                ids.append(self.word_id(tok))
        return ids

    def decode(self, ids: Sequence[int]) -> str:
        """Inverse of :meth:`encode` for in-vocab word text; specials skipped."""
        parts: list[str] = []
        for idx in ids:
            if idx in (self.pad_id, self.bos_id, self.eos_id):
                continue
            if idx == self.unk_id:
                parts.append("<unk>")
            elif idx == self.points.LBRACKET:
                parts.append("[")
            elif idx == self.points.RBRACKET:
                parts.append("]")
            elif idx < self.points.size:
                parts.append(self.points.id_to_token(idx))
            else:
                word_idx = idx - self.unk_id - 1
                if word_idx >= len(self._words):
                    raise VocabError(f"unknown token id {idx}")
                parts.append(self._words[word_idx])
        out = []
        for i, p in enumerate(parts):
            if i == 0 or p == "]" or (out and out[-1].endswith("[")):
                out.append(p)
            else:
                out.append(" " + p)
        return "".join(out)


def build_vocab(corpus: Iterable[str], max_words: int) -> Vocabulary:
    """Keep the ``max_words`` most frequent words, ties broken lexicographically."""
    if max_words < 1:
        raise VocabError(f"max_words must be >= 1, got {max_words}")
    counts: Counter[str] = Counter()
    n_texts = 0
    for text in corpus:
        n_texts += 1
        for tok in _WORD_RE.findall(text.lower()):
            if tok.isdigit() or tok in ("[", "]"):
                continue
            counts[tok] += 1
    if n_texts == 0 or not counts:
        raise VocabError("empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary([w for w, _ in ranked[:max_words]])


# --------------------------------------------------------------------------
# Synthetic dataset

DEFAULT_COLORS = ("red", "green", "blue", "yellow", "purple", "orange")
DEFAULT_SHAPES = ("circle", "square", "triangle", "diamond", "cross")


@dataclass(frozen=True)
class SynthConfig:
    n_images: int = 2000
    grid: int = 6
    colors: tuple[str, ...] = DEFAULT_COLORS
    shapes: tuple[str, ...] = DEFAULT_SHAPES
    min_objects: int = 2
    max_objects: int = 4
    min_scribble_points: int = 6
    max_scribble_points: int = 14
    seed: int = 1234

    def __post_init__(self):
        if self.grid < 2:
            raise ValueError(f"grid must be >= 2, got {self.grid}")
        if not self.colors or not self.shapes:
            raise ValueError("color and shape inventories must be non-empty")
        if not (1 <= self.min_objects <= self.max_objects):
            raise ValueError("bad object count range")

    def to_json(self) -> dict:
        return {
            "n_images": self.n_images,
            "grid": self.grid,
            "colors": list(self.colors),
            "shapes": list(self.shapes),
            "min_objects": self.min_objects,
            "max_objects": self.max_objects,
            "min_scribble_points": self.min_scribble_points,
            "max_scribble_points": self.max_scribble_points,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SynthConfig":
        return cls(
            n_images=int(obj["n_images"]),
            grid=int(obj["grid"]),
            colors=tuple(obj["colors"]),
            shapes=tuple(obj["shapes"]),
            min_objects=int(obj["min_objects"]),
            max_objects=int(obj["max_objects"]),
            min_scribble_points=int(obj["min_scribble_points"]),
            max_scribble_points=int(obj["max_scribble_points"]),
            seed=int(obj["seed"]),
        )


@dataclass(frozen=True)
class PlacedObject:
    color: str
    shape: str
    cells: tuple[tuple[int, int], ...]  # (row, col) pairs

    @property
    def caption(self) -> str:
        return f"{self.color} {self.shape}"


@dataclass(frozen=True)
class SyntheticImage:
    image_id: str
    grid: int
    objects: tuple[PlacedObject, ...]

    @property
    def global_caption(self) -> str:
        ordered = sorted(self.objects, key=lambda o: min(o.cells))
        return " ".join(o.caption for o in ordered)

    def object_mask(self, index: int) -> np.ndarray:
        mask = np.zeros((self.grid, self.grid), dtype=bool)
        for r, c in self.objects[index].cells:
            mask[r, c] = True
        return mask


@dataclass
class SyntheticDataset:
    config: SynthConfig
    images: dict[str, SyntheticImage]
    regional: list[RegionCaptionPair]
    global_: list[RegionCaptionPair]

    def caption_corpus(self) -> list[str]:
        return [p.text for p in self.regional] + [p.text for p in self.global_]


_FOOTPRINTS = ((1, 1), (1, 2), (2, 1))


def _place_objects(grid: int, n: int, types: list[tuple[str, str]], rng: np.random.Generator):
    """Drop n non-overlapping small rectangles with distinct (color, shape) types."""
    occupied = np.zeros((grid, grid), dtype=bool)
    placed = []
    for color, shape in types[:n]:
        for _ in range(200):
            h, w = _FOOTPRINTS[rng.integers(0, len(_FOOTPRINTS))]
            r = int(rng.integers(0, grid - h + 1))
            c = int(rng.integers(0, grid - w + 1))
            if occupied[r:r + h, c:c + w].any():
                continue
            occupied[r:r + h, c:c + w] = True
            cells = tuple((rr, cc) for rr in range(r, r + h) for cc in range(c, c + w))
            placed.append(PlacedObject(color, shape, cells))
            break
    return placed


def _scribble_in_cells(cells, grid: int, n_points: int, rng: np.random.Generator) -> Scribble:
    pts = []
    for _ in range(n_points):
        r, c = cells[rng.integers(0, len(cells))]
        x = (c + rng.uniform(0.05, 0.95)) / grid
        y = (r + rng.uniform(0.05, 0.95)) / grid
        pts.append(Point2D(float(x), float(y)))
    return Scribble(points=tuple(pts))


def make_synthetic_dataset(config: SynthConfig) -> SyntheticDataset:
    """Grid images of colored shapes with per-object and whole-image captions.

    Regional captions name one object ("red circle") and their scribbles
    stay inside that object's cells; the global caption lists every object
    in raster order. Byte-identical for a fixed config.
    """
    rng = np.random.default_rng(config.seed)
    all_types = [(c, s) for c in config.colors for s in config.shapes]
    images: dict[str, SyntheticImage] = {}
    regional: list[RegionCaptionPair] = []
    global_: list[RegionCaptionPair] = []
    for i in range(config.n_images):
        image_id = f"synth-{config.seed}-{i:05d}"
        n = int(rng.integers(config.min_objects, config.max_objects + 1))
        type_idx = rng.choice(len(all_types), size=n, replace=False)
        objects = _place_objects(config.grid, n, [all_types[j] for j in type_idx], rng)
        image = SyntheticImage(image_id, config.grid, tuple(objects))
        images[image_id] = image
        for obj in objects:
            n_pts = int(rng.integers(config.min_scribble_points, config.max_scribble_points + 1))
            scribble = _scribble_in_cells(obj.cells, config.grid, n_pts, rng)
            regional.append(RegionCaptionPair(image_id, scribble, obj.caption))
        global_.append(RegionCaptionPair(image_id, Scribble(), image.global_caption))
    return SyntheticDataset(config, images, regional, global_)


def split_pairs_by_image(
    pairs: Sequence[RegionCaptionPair], holdout_fraction: float, seed: int
) -> tuple[list[RegionCaptionPair], list[RegionCaptionPair]]:
    """Deterministic train/holdout split keyed on image ids."""
    ids = sorted({p.image_id for p in pairs})
    rng = np.random.default_rng(seed)
    n_hold = max(1, int(round(len(ids) * holdout_fraction)))
    hold = set(np.array(ids, dtype=object)[rng.permutation(len(ids))[:n_hold]])
    train = [p for p in pairs if p.image_id not in hold]
    heldout = [p for p in pairs if p.image_id in hold]
    return train, heldout


# --------------------------------------------------------------------------
# Batching


@dataclass(frozen=True)
class BatchItem:
    image_id: str
    point_token_ids: tuple[int, ...]
    target_ids: tuple[int, ...]
    origin: str  # "regional" | "global"

    def __post_init__(self):
        if self.origin not in ("regional", "global"):
            raise ValueError(f"bad origin {self.origin!r}")
        if self.origin == "global" and self.point_token_ids:
            raise ValueError("global items must carry no point tokens")


@dataclass(frozen=True)
class TrainingBatch:
    items: tuple[BatchItem, ...]

    def __len__(self) -> int:
        return len(self.items)


def _regional_item(pair: RegionCaptionPair, vocab: Vocabulary, k: int,
                   rng: np.random.Generator, use_point_tokens: bool) -> BatchItem:
    if pair.is_global:
        raise ValueError(f"regional pair for {pair.image_id!r} has an empty scribble")
    points = sample_points(pair.scribble, k, rng)
    tokens = tokenize_points(encode_points(points)) if use_point_tokens else []
    target = vocab.encode(pair.text) + [vocab.eos_id]
    return BatchItem(pair.image_id, tuple(tokens), tuple(target), "regional")


def _global_item(pair: RegionCaptionPair, vocab: Vocabulary) -> BatchItem:
    target = vocab.encode(pair.text) + [vocab.eos_id]
    return BatchItem(pair.image_id, (), tuple(target), "global")


def mixed_batch_sampler(
    regional: Sequence[RegionCaptionPair],
    global_: Sequence[RegionCaptionPair],
    batch_size: int,
    rng: np.random.Generator,
    *,
    vocab: Vocabulary,
    k: int,
    use_point_tokens: bool = True,
) -> Iterator[TrainingBatch]:
    """Endless stream of batches, each exactly half regional, half global.

    Both sides reshuffle independently once exhausted; an epoch over the
    regional side is ``len(regional) // (batch_size // 2)`` batches. K
    points are re-sampled from each scribble on every draw.
    """
    if batch_size % 2 != 0 or batch_size < 2:
        raise BatchConfigError(f"batch_size must be even and >= 2, got {batch_size}")
    if not regional or not global_:
        raise BatchConfigError("both datasets must be non-empty")
    half = batch_size // 2

    def shuffled(pairs: Sequence[RegionCaptionPair]) -> Iterator[RegionCaptionPair]:
        while True:
            for idx in rng.permutation(len(pairs)):
                yield pairs[idx]

    regional_stream = shuffled(regional)
    global_stream = shuffled(global_)
    while True:
        items = [
            _regional_item(next(regional_stream), vocab, k, rng, use_point_tokens)
            for _ in range(half)
        ]
        items += [_global_item(next(global_stream), vocab) for _ in range(half)]
        yield TrainingBatch(tuple(items))


def regional_batch_sampler(
    regional: Sequence[RegionCaptionPair],
    batch_size: int,
    rng: np.random.Generator,
    *,
    vocab: Vocabulary,
    k: int,
    use_point_tokens: bool = True,
) -> Iterator[TrainingBatch]:
    """All-regional batches; diagnostic foil for the mixed regime."""
    if batch_size < 1:
        raise BatchConfigError(f"batch_size must be >= 1, got {batch_size}")
    if not regional:
        raise BatchConfigError("dataset must be non-empty")

    def shuffled() -> Iterator[RegionCaptionPair]:
        while True:
            for idx in rng.permutation(len(regional)):
                yield regional[idx]

    stream = shuffled()
    while True:
        yield TrainingBatch(tuple(
            _regional_item(next(stream), vocab, k, rng, use_point_tokens)
            for _ in range(batch_size)))


def batches_per_epoch(n_regional: int, batch_size: int) -> int:
    return max(1, n_regional // (batch_size // 2))


# --------------------------------------------------------------------------
# File formats


def load_narratives_file(path, strict: bool = True) -> ParseResult:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_narratives(fh, strict=strict)


def load_box_captions_file(path) -> list[tuple[str, list[float], str]]:
    """Box-caption lines: {"image_id": str, "box": [x0,y0,x1,y1], "text": str}."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                out.append((str(obj["image_id"]), [float(v) for v in obj["box"]], str(obj["text"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise NarrativeParseError(f"line {lineno}: {exc}") from exc
    return out


def narrative_stats(result: ParseResult) -> dict:
    """Descriptive counts for a parsed narrative file."""
    n_segments = 0
    n_pairs = 0
    n_dropped = 0
    for record in result.records:
        n_segments += len(split_caption(record.caption))
        aligned = align_segments_to_trace(record)
        n_pairs += len(aligned.pairs)
        n_dropped += aligned.dropped_segments
    return {
        "records": len(result.records),
        "parse_warnings": len(result.warnings),
        "caption_segments": n_segments,
        "aligned_pairs": n_pairs,
        "dropped_segments": n_dropped,
        "trace_points": sum(len(r.trace) for r in result.records),
    }
