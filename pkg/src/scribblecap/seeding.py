"""Content-derived random seeds.

Evaluation and task operations draw per-instance randomness from the
instance's identity (image id, text, index) rather than from a shared
stream, so results are independent of iteration order and safe to compute
concurrently.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(base_seed: int, *parts: str) -> int:
    h = hashlib.sha256()
    h.update(str(int(base_seed)).encode("utf-8"))
    for p in parts:
        h.update(b"\x1f")
        h.update(p.encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little") & 0x7FFFFFFFFFFFFFFF


def derive_rng(base_seed: int, *parts: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(base_seed, *parts))
