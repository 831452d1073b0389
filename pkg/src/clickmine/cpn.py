"""Click proposal network: a query mask is ROI-aligned from three pyramid
levels into 3*k^2 masked feature vectors, a cascade of cross-attention layers
(stride 4 -> 8 -> 16 keys/values) aggregates them, and correlating the
aggregate against the stride-4 map yields a click-likelihood heatmap.

Heatmaps live on the stride-4 grid with values in [0, 1]; proposed clicks are
window maxima above a confidence threshold, reported in image coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .backbone import FeaturePyramid
from .masks import mask_bbox

QUERY_SIZE = 3
NMS_WINDOW_CELLS = 8  # 32 image px on the stride-4 grid
CLICK_CONFIDENCE = 0.2
HEATMAP_STRIDE = 4
FOCAL_ALPHA = 2.0
FOCAL_BETA = 4.0


# ------------------------------------------------------------------ sampling

def roi_align(features: torch.Tensor, box: tuple[float, float, float, float],
              out_size: int) -> torch.Tensor:
    """Bilinear ROI pooling of [d, h, w] features to [out, out, d].

    One sample point per output bin, at the bin center: for bin j,
    p = lo + (j + 0.5) * extent / out. Feature (r, c) sits at (x=c, y=r);
    samples are clamped to the feature grid (border replicate).
    """
    x0, y0, x1, y1 = box
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate box {box}")
    d, h, w = features.shape
    js = torch.arange(out_size, dtype=features.dtype)
    px = x0 + (js + 0.5) * (x1 - x0) / out_size
    py = y0 + (js + 0.5) * (y1 - y0) / out_size
    px = px.clamp(0.0, w - 1.0)
    py = py.clamp(0.0, h - 1.0)

    x0f = px.floor().clamp(0, w - 1)
    y0f = py.floor().clamp(0, h - 1)
    x1f = (x0f + 1).clamp(max=w - 1)
    y1f = (y0f + 1).clamp(max=h - 1)
    dx = (px - x0f).reshape(1, -1)
    dy = (py - y0f).reshape(-1, 1)
    x0i, x1i = x0f.long(), x1f.long()
    y0i, y1i = y0f.long(), y1f.long()

    f00 = features[:, y0i][:, :, x0i]
    f01 = features[:, y0i][:, :, x1i]
    f10 = features[:, y1i][:, :, x0i]
    f11 = features[:, y1i][:, :, x1i]
    top = f00 * (1 - dx) + f01 * dx
    bot = f10 * (1 - dx) + f11 * dx
    out = top * (1 - dy) + bot * dy
    return out.permute(1, 2, 0)


def resample_mask_nearest(mask: np.ndarray, box: tuple[float, float, float, float],
                          out_size: int) -> np.ndarray:
    """Nearest 0/1 resampling of a full-image mask over the box's bin centers."""
    x0, y0, x1, y1 = box
    h, w = mask.shape
    js = np.arange(out_size)
    px = x0 + (js + 0.5) * (x1 - x0) / out_size
    py = y0 + (js + 0.5) * (y1 - y0) / out_size
    cx = np.clip(np.floor(px).astype(int), 0, w - 1)
    cy = np.clip(np.floor(py).astype(int), 0, h - 1)
    return mask[np.ix_(cy, cx)]


@dataclass
class QuerySet:
    """3*k^2 width-d query vectors; non-mask positions are exactly zero."""

    vectors: torch.Tensor
    mask_pattern: np.ndarray  # [3*k^2] bool, True where the mask covers the bin
    k: int
    source_box: tuple[float, float, float, float]


# ------------------------------------------------------------------- decoder

def sinusoidal_positions(h: int, w: int, d: int) -> torch.Tensor:
    """Fixed 2-D sine/cosine encodings, flattened row-major to [h*w, d]."""
    if d % 4:
        raise ValueError("encoding width must be divisible by 4")
    quarter = d // 4
    freqs = torch.exp(-math.log(10000.0) * torch.arange(quarter) / max(1, quarter))
    ys = torch.arange(h).float()[:, None] * freqs[None]
    xs = torch.arange(w).float()[:, None] * freqs[None]
    enc_y = torch.cat([ys.sin(), ys.cos()], dim=1)  # [h, d/2]
    enc_x = torch.cat([xs.sin(), xs.cos()], dim=1)  # [w, d/2]
    out = torch.zeros(h, w, d)
    out[..., : d // 2] = enc_y[:, None, :]
    out[..., d // 2:] = enc_x[None, :, :]
    return out.reshape(h * w, d)


class CrossAttentionLayer(nn.Module):
    """Pre-norm cross-attention + feed-forward; queries attend one level."""

    def __init__(self, d: int, heads: int):
        super().__init__()
        self.attn = nn.MultiheadAttention(d, heads, batch_first=True)
        self.norm1 = nn.LayerNorm(d)
        self.norm2 = nn.LayerNorm(d)
        self.ff = nn.Sequential(nn.Linear(d, 2 * d), nn.ReLU(inplace=True),
                                nn.Linear(2 * d, d))

    def forward(self, q, keys, values, need_weights=False):
        attn_out, weights = self.attn(self.norm1(q), keys, values,
                                      need_weights=need_weights,
                                      average_attn_weights=True)
        q = q + attn_out
        q = q + self.ff(self.norm2(q))
        return q, weights


class ClickProposalNetwork(nn.Module):
    """Masked multi-level queries -> cascaded decoder -> heatmap."""

    def __init__(self, feature_width: int = 32, query_size: int = QUERY_SIZE,
                 heads: int = 4, level_order: tuple[int, ...] = (4, 8, 16),
                 zero_out: bool = True, seed: int = 0):
        super().__init__()
        self.d = feature_width
        self.k = query_size
        self.level_order = level_order
        self.zero_out = zero_out
        self.layers = nn.ModuleList(
            [CrossAttentionLayer(feature_width, heads) for _ in level_order])
        self.gain = nn.Parameter(torch.tensor(1.0 / math.sqrt(feature_width)))
        self.bias = nn.Parameter(torch.tensor(0.0))
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        for p in self.parameters():
            if p.dim() > 1:
                fan_in = p.shape[-1]
                std = (1.0 / fan_in) ** 0.5
                with torch.no_grad():
                    p.copy_(torch.randn(p.shape, generator=gen) * std)

    # ------------------------------------------------------------- queries

    def extract_queries(self, pyramid: FeaturePyramid, mask: np.ndarray) -> QuerySet:
        """ROI-align the mask's box on strides {4, 8, 16} and zero out bins
        the (nearest-resampled) mask does not cover."""
        if not mask.any():
            raise ValueError("query mask is empty")
        x0, y0, x1, y1 = mask_bbox(mask)
        box = (float(x0), float(y0), float(x1 + 1), float(y1 + 1))
        pattern_k = resample_mask_nearest(mask, box, self.k)

        per_level = []
        for stride in (4, 8, 16):
            feat = pyramid.level(stride)
            fbox = tuple(v / stride for v in box)
            q = roi_align(feat, fbox, self.k)  # [k, k, d]
            if self.zero_out:
                q = q * torch.from_numpy(pattern_k.astype(np.float32))[..., None]
            per_level.append(q.reshape(self.k * self.k, -1))
        vectors = torch.cat(per_level, dim=0)
        pattern = (np.tile(pattern_k.reshape(-1), 3) if self.zero_out
                   else np.ones(3 * self.k * self.k, dtype=bool))
        return QuerySet(vectors=vectors, mask_pattern=pattern, k=self.k,
                        source_box=box)

    # -------------------------------------------------------------- decode

    def decode(self, queries: QuerySet, pyramid: FeaturePyramid,
               return_attention: bool = False):
        """Run the cascade; output is the mean over query tokens."""
        q = queries.vectors[None]  # [1, n, d]
        attentions = []
        for layer, stride in zip(self.layers, self.level_order):
            feat = pyramid.level(stride)
            d, h, w = feat.shape
            kv = feat.reshape(d, h * w).T[None]
            keys = kv + sinusoidal_positions(h, w, d)[None]
            q, weights = layer(q, keys, kv, need_weights=return_attention)
            if return_attention:
                attentions.append(weights[0])
        agg = q[0].mean(dim=0)
        if return_attention:
            return agg, attentions
        return agg

    # ------------------------------------------------------------- heatmap

    def heatmap_logits(self, agg: torch.Tensor, pyramid: FeaturePyramid) -> torch.Tensor:
        """1x1 correlation of the aggregate against the stride-4 level."""
        feat = pyramid.level(4)
        return self.gain * torch.einsum("c,chw->hw", agg, feat) + self.bias

    def predict_heatmap_logits(self, pyramid: FeaturePyramid,
                               mask: np.ndarray) -> torch.Tensor:
        queries = self.extract_queries(pyramid, mask)
        agg = self.decode(queries, pyramid)
        return self.heatmap_logits(agg, pyramid)

    @torch.no_grad()
    def predict_heatmap(self, pyramid: FeaturePyramid, mask: np.ndarray) -> np.ndarray:
        self.eval()
        return torch.sigmoid(self.predict_heatmap_logits(pyramid, mask)).numpy()

    @torch.no_grad()
    def multi_exemplar_heatmap(self, pyramid: FeaturePyramid,
                               exemplars: list[np.ndarray]) -> np.ndarray:
        """Elementwise max over per-exemplar heatmaps."""
        if not exemplars:
            raise ValueError("exemplar set is empty")
        maps = [self.predict_heatmap(pyramid, m) for m in exemplars]
        return np.maximum.reduce(maps)


# ------------------------------------------------------------- ground truth

def gt_heatmap(group_masks: list[np.ndarray], shape: tuple[int, int],
               stride: int = HEATMAP_STRIDE) -> np.ndarray:
    """Unnormalised Gaussian peaks (max-combined) at each instance's center.

    sigma = min(box height, box width) / 6 in heatmap cells, from the 3-sigma
    kernel-radius convention; peak cells hold exactly 1.
    """
    if not group_masks:
        raise ValueError("group is empty")
    h, w = shape
    out = np.zeros((h, w), dtype=np.float64)
    rr, cc = np.mgrid[0:h, 0:w]
    for mask in group_masks:
        x0, y0, x1, y1 = mask_bbox(mask)
        c0 = min(int((x0 + x1 + 1) / 2 / stride), w - 1)
        r0 = min(int((y0 + y1 + 1) / 2 / stride), h - 1)
        sigma = max(min(x1 + 1 - x0, y1 + 1 - y0) / stride / 6.0, 1e-6)
        g = np.exp(-((rr - r0) ** 2 + (cc - c0) ** 2) / (2 * sigma**2))
        out = np.maximum(out, g)
    return out


def focal_heatmap_loss(pred: torch.Tensor, gt: torch.Tensor,
                       alpha: float = FOCAL_ALPHA, beta: float = FOCAL_BETA) -> torch.Tensor:
    """Penalty-reduced pixelwise focal loss over a predicted heatmap.

    L = -1/N_pos * [ sum_{y=1} (1-p)^a log p
                     + sum_{y<1} (1-y)^b p^a log(1-p) ].
    """
    p = pred.clamp(1e-6, 1 - 1e-6)
    pos = gt >= 1.0
    n_pos = pos.sum().clamp(min=1) if isinstance(pos, torch.Tensor) else max(1, pos.sum())
    pos_term = ((1 - p) ** alpha * torch.log(p))[pos].sum()
    neg_term = (((1 - gt) ** beta) * (p**alpha) * torch.log(1 - p))[~pos].sum()
    return -(pos_term + neg_term) / n_pos


# ---------------------------------------------------------- click extraction

def window_maxima(heatmap: np.ndarray, window: int) -> np.ndarray:
    """Sliding-window max with offsets [-(w//2), w-1-w//2] per axis."""
    h, w = heatmap.shape
    lo = window // 2
    hi = window - 1 - lo
    padded = np.full((h + window - 1, w + window - 1), -np.inf)
    padded[lo: lo + h, lo: lo + w] = heatmap
    out = np.full((h, w), -np.inf)
    for dy in range(-lo, hi + 1):
        for dx in range(-lo, hi + 1):
            out = np.maximum(out, padded[lo + dy: lo + dy + h, lo + dx: lo + dx + w])
    return out


def propose_clicks(heatmap: np.ndarray, window: int = NMS_WINDOW_CELLS,
                   threshold: float = CLICK_CONFIDENCE,
                   stride: int = HEATMAP_STRIDE) -> list[tuple[int, int, float]]:
    """Clicks at cells that are their window's maximum and >= threshold.

    Returned in image coordinates (cell * stride), ordered by confidence
    descending with row-major tie-break.
    """
    wmax = window_maxima(heatmap, window)
    keep = (heatmap >= wmax) & (heatmap >= threshold)
    ys, xs = np.nonzero(keep)
    conf = heatmap[ys, xs]
    order = np.argsort(-conf, kind="stable")
    return [(int(xs[i] * stride), int(ys[i] * stride), float(conf[i]))
            for i in order]


def heatmap_to_image(heatmap: np.ndarray) -> np.ndarray:
    """[0, 1] heatmap -> uint8 grayscale raster for UI export."""
    return np.clip(np.round(heatmap * 255), 0, 255).astype(np.uint8)
