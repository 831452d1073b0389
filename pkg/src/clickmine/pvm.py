"""Proposal verification: the user-clicked (target) mask and each proposed
mask are cropped as square ROIs from the image, the stride-4 features and the
mask itself, embedded to 64-d vectors, and scored by a sigmoid over their
Euclidean distance. Proposals scoring below 0.5 against the target are
rejected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .backbone import ChannelNorm, FeaturePyramid, image_to_tensor
from .clickseg import InstanceMask
from .masks import mask_bbox

CROP_SIZE = 64
EMBED_DIM = 64
SIMILARITY_THRESHOLD = 0.5
CONTRASTIVE_MARGIN = 1.0


def square_box(box: tuple[float, float, float, float]) -> tuple[float, float, float, float]:
    """Expand a box symmetrically to a square of side max(w, h)."""
    x0, y0, x1, y1 = box
    w, h = x1 - x0, y1 - y0
    side = max(w, h)
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    return (cx - side / 2, cy - side / 2, cx + side / 2, cy + side / 2)


def square_crop(source: torch.Tensor, box: tuple[float, float, float, float],
                out_size: int) -> torch.Tensor:
    """Square-extend the box and bilinearly resample [c, h, w] to out_size.

    Sample points are bin centers; out-of-image samples read zero (border
    regions are padded, not clamped).
    """
    x0, y0, x1, y1 = box
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate box {box}")
    sx0, sy0, sx1, sy1 = square_box(box)
    c, h, w = source.shape
    js = torch.arange(out_size, dtype=source.dtype)
    px = sx0 + (js + 0.5) * (sx1 - sx0) / out_size
    py = sy0 + (js + 0.5) * (sy1 - sy0) / out_size

    xf = px.floor().long()
    yf = py.floor().long()
    dx = (px - px.floor()).reshape(1, -1)
    dy = (py - py.floor()).reshape(-1, 1)

    # a one-pixel zero ring plus clamping makes every out-of-image neighbor
    # read zero, which is exactly the zero-padding convention
    padded = torch.zeros(c, h + 2, w + 2, dtype=source.dtype)
    padded[:, 1:-1, 1:-1] = source
    xi = (xf + 1).clamp(0, w + 1)
    yi = (yf + 1).clamp(0, h + 1)
    xi2 = (xf + 2).clamp(0, w + 1)
    yi2 = (yf + 2).clamp(0, h + 1)

    f00 = padded[:, yi][:, :, xi]
    f01 = padded[:, yi][:, :, xi2]
    f10 = padded[:, yi2][:, :, xi]
    f11 = padded[:, yi2][:, :, xi2]
    return (f00 * (1 - dx) * (1 - dy) + f01 * dx * (1 - dy)
            + f10 * (1 - dx) * dy + f11 * dx * dy)


def resample_mask_binary(mask: np.ndarray, box, out_size: int) -> np.ndarray:
    """Nearest 0/1 resample over the square-extended box (zero outside)."""
    sx0, sy0, sx1, sy1 = square_box(box)
    h, w = mask.shape
    js = np.arange(out_size)
    px = np.floor(sx0 + (js + 0.5) * (sx1 - sx0) / out_size).astype(int)
    py = np.floor(sy0 + (js + 0.5) * (sy1 - sy0) / out_size).astype(int)
    out = np.zeros((out_size, out_size), dtype=bool)
    ok_x = (px >= 0) & (px < w)
    ok_y = (py >= 0) & (py < h)
    sub = mask[np.ix_(py[ok_y], px[ok_x])]
    grid = np.zeros((out_size, out_size), dtype=bool)
    grid[np.ix_(ok_y, ok_x)] = sub
    out |= grid
    return out


@dataclass
class RoiTriplet:
    """Square crops of the image, stride-4 features and mask, plus scale."""

    image_crop: torch.Tensor    # [3, S, S]
    feature_crop: torch.Tensor  # [d, S/4, S/4]
    mask_crop: torch.Tensor     # [1, S, S] binary
    scale: float                # square side / S


@dataclass
class Embedding:
    z: torch.Tensor  # [EMBED_DIM]


def make_triplet(image: np.ndarray, pyramid: FeaturePyramid,
                 mask: np.ndarray, crop_size: int = CROP_SIZE) -> RoiTriplet:
    x0, y0, x1, y1 = mask_bbox(mask)
    box = (float(x0), float(y0), float(x1 + 1), float(y1 + 1))
    side = max(box[2] - box[0], box[3] - box[1])
    img_t = image_to_tensor(image)
    image_crop = square_crop(img_t, box, crop_size)
    fbox = tuple(v / 4 for v in box)
    feature_crop = square_crop(pyramid.level(4), fbox, crop_size // 4)
    mask_crop = torch.from_numpy(
        resample_mask_binary(mask, box, crop_size).astype(np.float32))[None]
    return RoiTriplet(image_crop=image_crop, feature_crop=feature_crop,
                      mask_crop=mask_crop, scale=side / crop_size)


class ProposalVerifier(nn.Module):
    """Small conv encoder over the ROI triplet + distance-sigmoid scorer."""

    def __init__(self, feature_width: int = 32, crop_size: int = CROP_SIZE,
                 seed: int = 0):
        super().__init__()
        self.crop_size = crop_size
        self.image_branch = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1), ChannelNorm(16), nn.ReLU(inplace=True),
            nn.Conv2d(16, 32, 3, stride=2, padding=1), ChannelNorm(32), nn.ReLU(inplace=True))
        fused = 32 + feature_width + 1
        self.fuse = nn.Sequential(
            nn.Conv2d(fused, 64, 3, stride=2, padding=1), ChannelNorm(64), nn.ReLU(inplace=True),
            nn.Conv2d(64, 64, 3, stride=2, padding=1), ChannelNorm(64), nn.ReLU(inplace=True))
        self.project = nn.Linear(64 + 1, EMBED_DIM)
        self.score_a = nn.Parameter(torch.tensor(-2.0))
        self.score_b = nn.Parameter(torch.tensor(2.0))
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                std = (2.0 / fan_in) ** 0.5
                with torch.no_grad():
                    m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * std)
                    m.bias.zero_()
            elif isinstance(m, nn.Linear):
                std = (1.0 / m.in_features) ** 0.5
                with torch.no_grad():
                    m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * std)
                    m.bias.zero_()

    def embed_batch(self, triplets: list[RoiTriplet]) -> torch.Tensor:
        """[n, EMBED_DIM] embeddings; differentiable."""
        imgs = torch.stack([t.image_crop for t in triplets])
        feats = torch.stack([t.feature_crop for t in triplets])
        masks = torch.stack([t.mask_crop for t in triplets])
        scales = torch.tensor([[t.scale] for t in triplets], dtype=torch.float32)
        x = self.image_branch(imgs)
        s4 = masks.shape[-1] // feats.shape[-1]
        mask_small = masks.reshape(masks.shape[0], 1, feats.shape[-2], s4,
                                   feats.shape[-1], s4).mean(dim=(3, 5))
        x = torch.cat([x, feats, mask_small], dim=1)
        x = self.fuse(x)
        pooled = x.mean(dim=(2, 3))
        return self.project(torch.cat([pooled, scales], dim=1))

    def embed(self, triplet: RoiTriplet) -> Embedding:
        was_training = self.training
        self.eval()
        with torch.no_grad():
            z = self.embed_batch([triplet])[0]
        if was_training:
            self.train()
        return Embedding(z=z)

    def similarity(self, z_t: Embedding, z_s: Embedding) -> float:
        with torch.no_grad():
            d = torch.linalg.vector_norm(z_t.z - z_s.z)
            return float(torch.sigmoid(self.score_a * d + self.score_b))

    def pair_scores(self, z_a: torch.Tensor, z_b: torch.Tensor) -> torch.Tensor:
        """Differentiable batch scores from [n, dim] embedding pairs."""
        d = torch.linalg.vector_norm(z_a - z_b, dim=1)
        return torch.sigmoid(self.score_a * d + self.score_b)

    @torch.no_grad()
    def verify(self, target: InstanceMask, proposals: list[InstanceMask],
               pyramid: FeaturePyramid, image: np.ndarray,
               threshold: float = SIMILARITY_THRESHOLD) -> list[tuple[InstanceMask, float]]:
        """Keep proposals scoring >= threshold against the target mask."""
        if not target.mask.any():
            raise ValueError("target mask is empty")
        if not proposals:
            return []
        self.eval()
        z_t = self.embed(make_triplet(image, pyramid, target.mask, self.crop_size))
        kept = []
        for prop in proposals:
            z_s = self.embed(make_triplet(image, pyramid, prop.mask, self.crop_size))
            score = self.similarity(z_t, z_s)
            if score >= threshold:
                kept.append((prop, score))
        return kept


def pvm_loss(z_a: torch.Tensor, z_b: torch.Tensor, labels: torch.Tensor,
             verifier: ProposalVerifier,
             margin: float = CONTRASTIVE_MARGIN) -> dict[str, torch.Tensor]:
    """Max-margin contrastive + BCE on the distance-sigmoid scores.

    labels are 1 for same-group pairs, 0 otherwise.
    """
    d = torch.linalg.vector_norm(z_a - z_b, dim=1)
    l_con = (labels * d**2
             + (1 - labels) * torch.clamp(margin - d, min=0) ** 2).mean()
    scores = torch.sigmoid(verifier.score_a * d + verifier.score_b)
    scores = scores.clamp(1e-6, 1 - 1e-6)
    l_bce = nn.functional.binary_cross_entropy(scores, labels)
    total = l_con + l_bce
    comps = {"contrastive": l_con, "bce": l_bce, "total": total}
    for name, v in comps.items():
        if not torch.isfinite(v):
            raise RuntimeError(f"non-finite PVM loss component {name}")
    return comps
