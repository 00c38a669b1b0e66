"""Point sets, coordinate quantization, and the bracketed token string codec.

Normalized 2-D points are quantized to integers 0..100 and serialized as
space-separated ``[xq yq]`` groups, e.g. ``"[32 64] [37 62]"``. The empty
point list serializes to the empty string and denotes a whole-image
(global) indication. Everything here is pure; random sampling takes a
caller-supplied ``numpy.random.Generator``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Optional, Sequence

import numpy as np

COORD_MAX = 100

# "[a b]" groups separated by single spaces; integers 1-3 digits.
_GROUP_RE = re.compile(r"\[(\d{1,3}) (\d{1,3})\]")
POINT_STRING_RE = re.compile(r"^(\[\d{1,3} \d{1,3}\])( \[\d{1,3} \d{1,3}\])*$")


class PointError(ValueError):
    """Domain error for invalid coordinates or point sets."""


class PointParseError(ValueError):
    """Malformed point string; carries the byte offset of the defect."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class Point2D:
    """A point in normalized image coordinates, x along width, y along height."""

    x: float
    y: float

    def __post_init__(self):
        if not (0.0 <= self.x <= 1.0) or not (0.0 <= self.y <= 1.0):
            raise PointError(f"point ({self.x}, {self.y}) outside [0,1]^2")


@dataclass(frozen=True)
class QuantizedPoint:
    xq: int
    yq: int

    def __post_init__(self):
        if not (0 <= self.xq <= COORD_MAX) or not (0 <= self.yq <= COORD_MAX):
            raise PointError(f"quantized point ({self.xq}, {self.yq}) outside 0..{COORD_MAX}")


@dataclass(frozen=True)
class Scribble:
    """An ordered point trajectory; empty means the whole image.

    Timestamps, when present, pair with points one-to-one and must be
    non-decreasing.
    """

    points: tuple[Point2D, ...] = ()
    timestamps: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        if self.timestamps is not None:
            ts = tuple(float(t) for t in self.timestamps)
            object.__setattr__(self, "timestamps", ts)
            if len(ts) != len(self.points):
                raise PointError(
                    f"{len(ts)} timestamps for {len(self.points)} points"
                )
            if any(b < a for a, b in zip(ts, ts[1:])):
                raise PointError("timestamps must be non-decreasing")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def is_empty(self) -> bool:
        return not self.points

    @classmethod
    def from_xy(cls, xy: Sequence[tuple[float, float]],
                timestamps: Optional[Sequence[float]] = None) -> "Scribble":
        ts = tuple(timestamps) if timestamps is not None else None
        return cls(tuple(Point2D(float(x), float(y)) for x, y in xy), ts)


def quantize_coord(c: float) -> int:
    """Map a coordinate in [0,1] to an integer 0..100, ties away from zero.

    Goes through the shortest decimal repr so that e.g. 0.365 (stored as a
    binary float just below 36.5/100) still rounds up to 37, matching the
    by-hand rule.
    """
    c = float(c)
    if not (0.0 <= c <= 1.0):
        raise PointError(f"coordinate {c} outside [0,1]")
    return int((Decimal(repr(c)) * COORD_MAX).quantize(Decimal("1"), rounding=ROUND_HALF_UP))


def quantize_point(p: Point2D) -> QuantizedPoint:
    return QuantizedPoint(quantize_coord(p.x), quantize_coord(p.y))


def encode_points(points) -> str:
    """Serialize points as ``"[xq yq] [xq yq] ..."``; empty input -> ``""``.

    Accepts a :class:`Scribble` or any sequence of :class:`Point2D`.
    """
    if isinstance(points, Scribble):
        points = points.points
    return " ".join(f"[{quantize_coord(p.x)} {quantize_coord(p.y)}]" for p in points)


def decode_point_string(s: str) -> list[QuantizedPoint]:
    """Parse the codec grammar back into quantized points.

    Raises :class:`PointParseError` naming the byte offset of the first
    malformed or out-of-range piece.
    """
    if s == "":
        return []
    out: list[QuantizedPoint] = []
    pos = 0
    while True:
        m = _GROUP_RE.match(s, pos)
        if m is None:
            raise PointParseError("expected '[x y]' group", pos)
        xq, yq = int(m.group(1)), int(m.group(2))
        if xq > COORD_MAX:
            raise PointParseError(f"coordinate {xq} out of range 0..{COORD_MAX}", m.start(1))
        if yq > COORD_MAX:
            raise PointParseError(f"coordinate {yq} out of range 0..{COORD_MAX}", m.start(2))
        out.append(QuantizedPoint(xq, yq))
        pos = m.end()
        if pos == len(s):
            return out
        if s[pos] != " ":
            raise PointParseError("expected ' ' between groups", pos)
        pos += 1


class PointTokenVocab:
    """Fixed bijection between point-string tokens and the low id range.

    Layout: pad=0, bos=1, eos=2, '['=3, ']'=4, then the 101 integer
    literals '0'..'100' at 5..105. Word vocabularies start above
    :attr:`size`, keeping the two id spaces disjoint.
    """

    PAD = 0
    BOS = 1
    EOS = 2
    LBRACKET = 3
    RBRACKET = 4
    LITERAL_BASE = 5

    def __init__(self):
        self._token_to_id = {"<pad>": self.PAD, "<bos>": self.BOS, "<eos>": self.EOS,
                             "[": self.LBRACKET, "]": self.RBRACKET}
        for v in range(COORD_MAX + 1):
            self._token_to_id[str(v)] = self.LITERAL_BASE + v
        self._id_to_token = {i: t for t, i in self._token_to_id.items()}

    @property
    def size(self) -> int:
        return self.LITERAL_BASE + COORD_MAX + 1

    def literal_id(self, value: int) -> int:
        if not (0 <= value <= COORD_MAX):
            raise PointError(f"literal {value} out of range 0..{COORD_MAX}")
        return self.LITERAL_BASE + value

    def token_to_id(self, token: str) -> int:
        try:
            return self._token_to_id[token]
        except KeyError:
            raise PointError(f"unknown point token {token!r}") from None

    def id_to_token(self, idx: int) -> str:
        try:
            return self._id_to_token[idx]
        except KeyError:
            raise PointError(f"unknown point token id {idx}") from None


_POINT_VOCAB = PointTokenVocab()


def point_vocab() -> PointTokenVocab:
    """The shared immutable point-token vocabulary."""
    return _POINT_VOCAB


def tokenize_points(s: str, vocab: Optional[PointTokenVocab] = None) -> list[int]:
    """Token ids for a point string: one per bracket and per integer literal.

    A K-point string yields exactly 4*K ids.
    """
    vocab = vocab or _POINT_VOCAB
    ids: list[int] = []
    for q in decode_point_string(s):
        ids.extend((vocab.LBRACKET, vocab.literal_id(q.xq), vocab.literal_id(q.yq), vocab.RBRACKET))
    return ids


def detokenize_points(ids: Sequence[int], vocab: Optional[PointTokenVocab] = None) -> str:
    """Inverse of :func:`tokenize_points` for well-formed id sequences."""
    vocab = vocab or _POINT_VOCAB
    if len(ids) % 4 != 0:
        raise PointError(f"point token count {len(ids)} is not a multiple of 4")
    groups = []
    for i in range(0, len(ids), 4):
        l, xq, yq, r = ids[i:i + 4]
        if l != vocab.LBRACKET or r != vocab.RBRACKET:
            raise PointError(f"ill-formed group at token {i}")
        xv = vocab.id_to_token(xq)
        yv = vocab.id_to_token(yq)
        if not (xv.isdigit() and yv.isdigit()):
            raise PointError(f"non-literal coordinate token at token {i}")
        groups.append(f"[{xv} {yv}]")
    return " ".join(groups)


def sample_points(scribble: Scribble, k: int, rng: np.random.Generator) -> Scribble:
    """Draw K points uniformly from a scribble, keeping trajectory order.

    Scribbles shorter than K are sampled with replacement so short user
    strokes still work. Empty scribbles are a domain error; callers encode
    those as the empty string directly.
    """
    if k < 1:
        raise PointError(f"k must be positive, got {k}")
    if scribble.is_empty:
        raise PointError("cannot sample from an empty scribble")
    n = len(scribble.points)
    idx = rng.choice(n, size=k, replace=n < k)
    idx.sort()
    return Scribble(tuple(scribble.points[i] for i in idx))


def sample_points_in_mask(mask: np.ndarray, k: int, rng: np.random.Generator) -> Scribble:
    """K points uniform over a binary grid's set cells, at cell centers."""
    if k < 1:
        raise PointError(f"k must be positive, got {k}")
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise PointError(f"mask must be 2-D, got shape {mask.shape}")
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        raise PointError("mask has no set cells")
    h, w = mask.shape
    picks = rng.integers(0, rows.size, size=k)
    return Scribble(tuple(Point2D((cols[i] + 0.5) / w, (rows[i] + 0.5) / h) for i in picks))


def sample_points_in_bbox(box: Sequence[float], k: int, rng: np.random.Generator) -> Scribble:
    """K points uniform inside a normalized [x0, y0, x1, y1] box."""
    if k < 1:
        raise PointError(f"k must be positive, got {k}")
    x0, y0, x1, y1 = (float(v) for v in box)
    if not (0.0 <= x0 <= 1.0 and 0.0 <= y0 <= 1.0 and 0.0 <= x1 <= 1.0 and 0.0 <= y1 <= 1.0):
        raise PointError(f"box {box} outside [0,1]^2")
    if x1 <= x0 or y1 <= y0:
        raise PointError(f"box {box} has no area")
    xs = rng.uniform(x0, x1, size=k)
    ys = rng.uniform(y0, y1, size=k)
    return Scribble(tuple(Point2D(float(x), float(y)) for x, y in zip(xs, ys)))
