"""Full-image run-length mask codec.

Runs are row-major and alternate value, always starting with the zero run
(which may have length 0 when the mask's first pixel is set). The run
lengths of a well-formed encoding sum to exactly H*W.
"""

from __future__ import annotations

import numpy as np

from ..errors import MalformedMask


def encode_mask(mask: np.ndarray) -> dict:
    """Encode a binary HxW mask as {"size": [H, W], "counts": [...]}."""
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {m.shape}")
    flat = m.ravel()
    h, w = m.shape
    if flat.size == 0:
        return {"size": [h, w], "counts": []}
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    starts = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(starts).tolist()
    if flat[0]:
        counts = [0] + counts
    return {"size": [h, w], "counts": counts}


def decode_mask(rle: dict) -> np.ndarray:
    """Decode an RLE dict back to a boolean HxW mask.

    Raises MalformedMask when the structure is wrong or the run lengths
    do not sum to H*W.
    """
    if not isinstance(rle, dict) or "size" not in rle or "counts" not in rle:
        raise MalformedMask("RLE must be a dict with 'size' and 'counts'")
    size = rle["size"]
    counts = rle["counts"]
    if (
        not isinstance(size, (list, tuple))
        or len(size) != 2
        or not all(isinstance(s, int) and s >= 1 for s in size)
    ):
        raise MalformedMask(f"RLE size must be two positive ints, got {size!r}")
    if not isinstance(counts, (list, tuple)) or not all(
        isinstance(c, int) and c >= 0 for c in counts
    ):
        raise MalformedMask("RLE counts must be non-negative integers")
    h, w = size
    total = sum(counts)
    if total != h * w:
        raise MalformedMask(f"RLE runs sum to {total}, expected {h * w}")
    values = np.resize(np.array([False, True]), len(counts))
    flat = np.repeat(values, counts)
    return flat.reshape(h, w)
