"""Non-learned similarity heatmaps used as proposal-network baselines.

Both return [0, 1] min-max normalised maps on the stride-4 grid, so the
evaluation code scores them exactly like the learned heatmaps.
"""

from __future__ import annotations

import numpy as np
import torch

from .backbone import FeaturePyramid
from .cpn import roi_align
from .masks import mask_bbox


def _minmax(x: np.ndarray) -> np.ndarray:
    lo, hi = float(x.min()), float(x.max())
    if hi <= lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def downsample_mask_any(mask: np.ndarray, stride: int) -> np.ndarray:
    """Cell is foreground iff any pixel of its stride x stride block is."""
    h, w = mask.shape
    ph = (-h) % stride
    pw = (-w) % stride
    if ph or pw:
        mask = np.pad(mask, ((0, ph), (0, pw)))
    hh, ww = mask.shape
    return mask.reshape(hh // stride, stride, ww // stride, stride).any(axis=(1, 3))


def dot_product_heatmap(x1: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Masked global-average-pooled query dotted against every location.

    x1 is the stride-4 feature map as [d, h, w]; the mask is image-sized.
    """
    if not mask.any():
        raise ValueError("mask is empty")
    d, h, w = x1.shape
    cell_mask = downsample_mask_any(mask, 4)[:h, :w]
    q = x1[:, cell_mask].mean(axis=1)
    response = np.einsum("c,chw->hw", q, x1)
    return _minmax(response)


def pyramid_patch_match(pyramid: FeaturePyramid, mask: np.ndarray,
                        patch: int = 3) -> np.ndarray:
    """Sliding-window negative-SSD match of a 3x3 ROI query, per level.

    Each level's response is min-max normalised, nearest-upsampled to the
    stride-4 grid, and the three maps are averaged.
    """
    if not mask.any():
        raise ValueError("mask is empty")
    x0, y0, x1, y1 = mask_bbox(mask)
    box = (float(x0), float(y0), float(x1 + 1), float(y1 + 1))
    target_h, target_w = pyramid.level(4).shape[1:]

    maps = []
    for stride in (4, 8, 16):
        feat = pyramid.level(stride)
        fbox = tuple(v / stride for v in box)
        query = roi_align(feat, fbox, patch).permute(2, 0, 1).numpy()  # [d,k,k]
        response = -sliding_ssd(feat.numpy(), query)
        norm = _minmax(response)
        up = stride // 4
        big = np.kron(norm, np.ones((up, up)))[:target_h, :target_w]
        maps.append(big)
    return np.mean(maps, axis=0)


def sliding_ssd(features: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Sum of squared distances of the query patch at every location.

    The query anchors at its top-left-of-center; windows are clipped at the
    borders (out-of-bounds cells contribute nothing).
    """
    d, h, w = features.shape
    _, kh, kw = query.shape
    off_y = kh // 2
    off_x = kw // 2
    out = np.zeros((h, w))
    for dy in range(kh):
        for dx in range(kw):
            qv = query[:, dy, dx][:, None, None]
            sy = dy - off_y
            sx = dx - off_x
            ys0, ys1 = max(0, -sy), min(h, h - sy)
            xs0, xs1 = max(0, -sx), min(w, w - sx)
            diff = features[:, ys0 + sy: ys1 + sy, xs0 + sx: xs1 + sx] - qv
            out[ys0:ys1, xs0:xs1] += (diff**2).sum(axis=0)
    return out
