"""Binary-mask plumbing shared by every module.

One run-length encoding is used everywhere a mask leaves process memory
(dataset manifests, the HTTP wire, exports): row-major ``counts`` as a flat
list of ``start, length`` pairs over the flattened mask, starts strictly
increasing, runs non-overlapping.
"""

from __future__ import annotations

import numpy as np

Box = tuple[float, float, float, float]


def rle_encode(mask: np.ndarray) -> dict:
    """Encode a binary H x W mask as {width, height, counts}.

    ``counts`` holds flat (start, length) pairs over the row-major scan.
    """
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    flat = np.asarray(mask, dtype=bool).ravel()
    # run starts: positions where value flips 0->1; run ends: 1->0
    padded = np.concatenate(([False], flat, [False]))
    diff = np.diff(padded.astype(np.int8))
    starts = np.flatnonzero(diff == 1)
    ends = np.flatnonzero(diff == -1)
    counts: list[int] = []
    for s, e in zip(starts, ends):
        counts.extend((int(s), int(e - s)))
    return {"width": int(mask.shape[1]), "height": int(mask.shape[0]), "counts": counts}


def rle_decode(rle: dict) -> np.ndarray:
    """Decode {width, height, counts} back to a bool H x W mask."""
    h, w = int(rle["height"]), int(rle["width"])
    flat = np.zeros(h * w, dtype=bool)
    counts = rle["counts"]
    if len(counts) % 2 != 0:
        raise ValueError("counts must hold (start, length) pairs")
    prev_end = 0
    for i in range(0, len(counts), 2):
        s, n = int(counts[i]), int(counts[i + 1])
        if s < prev_end or n <= 0 or s + n > h * w:
            raise ValueError(f"invalid run (start={s}, length={n})")
        flat[s : s + n] = True
        prev_end = s + n
    return flat.reshape(h, w)


def mask_bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    """Tight integer bbox (x0, y0, x1, y1), inclusive, of a nonempty mask."""
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise ValueError("mask is empty")
    return int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """IoU of two binary masks; 0.0 when both are empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    inter = np.logical_and(a, b).sum()
    union = np.logical_or(a, b).sum()
    return float(inter) / float(union) if union else 0.0


def point_in_mask(mask: np.ndarray, x: int, y: int) -> bool:
    """Whether integer pixel (x, y) is foreground; out-of-bounds is False."""
    h, w = mask.shape
    if not (0 <= x < w and 0 <= y < h):
        return False
    return bool(mask[y, x])


def boxes_iou(a: Box, b: Box) -> float:
    """IoU of two (x0, y0, x1, y1) boxes with x1 > x0, y1 > y0."""
    ix0, iy0 = max(a[0], b[0]), max(a[1], b[1])
    ix1, iy1 = min(a[2], b[2]), min(a[3], b[3])
    iw, ih = max(0.0, ix1 - ix0), max(0.0, iy1 - iy0)
    inter = iw * ih
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0
