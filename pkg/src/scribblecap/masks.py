"""Binary grid masks: proposals, run-length coding, morphological dilation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


class MaskError(ValueError):
    pass


@dataclass
class MaskProposal:
    """A candidate region: a binary mask over the patch grid."""

    image_id: str
    grid: np.ndarray
    provenance: str = "unknown"

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=bool)
        if self.grid.ndim != 2:
            raise MaskError(f"mask grid must be 2-D, got shape {self.grid.shape}")

    @property
    def is_empty(self) -> bool:
        return not bool(self.grid.any())

    @property
    def area(self) -> int:
        return int(self.grid.sum())

    @property
    def dims(self) -> tuple[int, int]:
        return self.grid.shape


def dilate_mask(mask: np.ndarray, radius: int) -> np.ndarray:
    """Morphological dilation with a (2r+1)^2 square structuring element.

    Radius 0 is the identity. Output is clipped at the grid border.
    """
    if radius < 0:
        raise MaskError(f"radius must be non-negative, got {radius}")
    mask = np.asarray(mask, dtype=bool)
    if radius == 0:
        return mask.copy()
    size = 2 * radius + 1
    return ndimage.binary_dilation(mask, structure=np.ones((size, size), dtype=bool))


def rle_encode(mask: np.ndarray) -> list[int]:
    """Row-major run lengths of alternating values, starting with zeros.

    The first run counts leading False cells (possibly 0), then runs
    alternate True/False. Sum of runs equals H*W.
    """
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return []
    changes = np.nonzero(np.diff(flat))[0] + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return [int(r) for r in runs]


def rle_decode(runs: list[int], dims: tuple[int, int]) -> np.ndarray:
    h, w = dims
    total = sum(runs)
    if total != h * w:
        raise MaskError(f"run lengths sum to {total}, expected {h * w}")
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    value = False
    for run in runs:
        if run < 0:
            raise MaskError(f"negative run length {run}")
        if value:
            flat[pos:pos + run] = True
        pos += run
        value = not value
    return flat.reshape(h, w)
