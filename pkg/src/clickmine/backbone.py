"""Feature pyramid extractor: a small strided conv encoder with a top-down
lateral-sum pyramid, emitting four levels at strides 4/8/16/32 that every
learned module shares.

Only spatially local ops are used (convs + per-pixel channel norm), so a
one-pixel input change propagates no farther than the computed receptive
field, and constant inputs give spatially constant interior features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

STRIDES = (4, 8, 16, 32)
DEFAULT_WIDTH = 32


@dataclass
class FeaturePyramid:
    """Per-level (stride, features) for one image; features are [d, h, w]."""

    levels: list[tuple[int, torch.Tensor]]
    image_size: tuple[int, int]  # original (H, W) before padding

    def level(self, stride: int) -> torch.Tensor:
        for s, feat in self.levels:
            if s == stride:
                return feat
        raise KeyError(f"no level with stride {stride}")

    def numpy(self, stride: int) -> np.ndarray:
        return self.level(stride).detach().cpu().numpy()

    @property
    def width(self) -> int:
        return self.levels[0][1].shape[0]


class ChannelNorm(nn.Module):
    """LayerNorm over the channel dim only; strictly per-pixel, so it keeps
    conv locality intact (GroupNorm/BatchNorm would not)."""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mu = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        x = (x - mu) / torch.sqrt(var + self.eps)
        return x * self.weight[None, :, None, None] + self.bias[None, :, None, None]


def conv_block(cin: int, cout: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1),
        ChannelNorm(cout),
        nn.ReLU(inplace=True),
    )


class FeaturePyramidNet(nn.Module):
    """4-stage encoder + FPN; `width` is the shared pyramid channel count."""

    def __init__(self, width: int = DEFAULT_WIDTH, seed: int = 0):
        super().__init__()
        self.width = width
        self.stem = nn.Sequential(conv_block(3, 16, stride=2),
                                  conv_block(16, 32, stride=2))
        self.stage2 = nn.Sequential(conv_block(32, 48, stride=2), conv_block(48, 48))
        self.stage3 = nn.Sequential(conv_block(48, 64, stride=2), conv_block(64, 64))
        self.stage4 = nn.Sequential(conv_block(64, 96, stride=2), conv_block(96, 96))
        self.lateral = nn.ModuleList([nn.Conv2d(c, width, 1)
                                      for c in (32, 48, 64, 96)])
        self.smooth = nn.ModuleList([nn.Conv2d(width, width, 3, padding=1)
                                     for _ in STRIDES])
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        """He fan-in init from a dedicated generator; torch-version stable."""
        gen = torch.Generator().manual_seed(seed)
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                std = (2.0 / fan_in) ** 0.5
                with torch.no_grad():
                    m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * std)
                    if m.bias is not None:
                        m.bias.zero_()

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        """Batched forward; x is [B, 3, H, W] with H, W divisible by 32."""
        if x.shape[-1] % 32 or x.shape[-2] % 32:
            raise ValueError(f"H, W must be divisible by 32, got {tuple(x.shape[-2:])}")
        c1 = self.stem(x)
        c2 = self.stage2(c1)
        c3 = self.stage3(c2)
        c4 = self.stage4(c3)
        laterals = [lat(c) for lat, c in zip(self.lateral, (c1, c2, c3, c4))]
        outs = [laterals[3]]
        for i in (2, 1, 0):
            up = F.interpolate(outs[0], scale_factor=2, mode="nearest")
            outs.insert(0, laterals[i] + up)
        return [smooth(o) for smooth, o in zip(self.smooth, outs)]

    @torch.no_grad()
    def extract(self, image: np.ndarray) -> FeaturePyramid:
        """Single-image inference from an H x W x 3 uint8 array.

        Images not divisible by 32 are zero-padded bottom/right, then each
        level is cropped back to ceil(H/stride) x ceil(W/stride).
        """
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValueError(f"expected H x W x 3 image, got {image.shape}")
        h, w = image.shape[:2]
        if h <= 0 or w <= 0:
            raise ValueError("image has non-positive dimensions")
        x = image_to_tensor(image)[None]
        pad_h = (-h) % 32
        pad_w = (-w) % 32
        if pad_h or pad_w:
            x = F.pad(x, (0, pad_w, 0, pad_h))
        was_training = self.training
        self.eval()
        feats = self.forward(x)
        if was_training:
            self.train()
        levels = []
        for stride, f in zip(STRIDES, feats):
            lh = -(-h // stride)
            lw = -(-w // stride)
            levels.append((stride, f[0, :, :lh, :lw]))
        return FeaturePyramid(levels=levels, image_size=(h, w))

    def count_parameters(self, trainable_only: bool = True) -> int:
        return sum(p.numel() for p in self.parameters()
                   if p.requires_grad or not trainable_only)

    def receptive_field_radius(self, stride: int = 4) -> int:
        """Upper-bound per-axis (Chebyshev) image-pixel radius a single input
        pixel can influence at the given output level, composed from the
        (kernel, stride) chain."""
        # encoder chains per backbone stage, as (kernel, stride) pairs
        chains = {
            4: [(3, 2), (3, 2)],
            8: [(3, 2), (3, 2), (3, 2), (3, 1)],
            16: [(3, 2), (3, 2), (3, 2), (3, 1), (3, 2), (3, 1)],
            32: [(3, 2), (3, 2), (3, 2), (3, 1), (3, 2), (3, 1), (3, 2), (3, 1)],
        }

        def rf(chain):
            r, j = 1, 1
            for k, s in chain:
                r += (k - 1) * j
                j *= s
            return r

        # the top-down path makes every level see the deepest stage; add the
        # coarsest cell footprint (nearest upsampling smears whole cells), the
        # 3x3 smooth at the output stride, and center-alignment slack
        deepest = rf(chains[32])
        return (deepest - 1) // 2 + STRIDES[-1] + 3 * stride


def image_to_tensor(image: np.ndarray) -> torch.Tensor:
    """H x W x 3 uint8 -> [3, H, W] float32 in [0, 1]."""
    arr = np.ascontiguousarray(image)
    if not arr.flags.writeable:
        arr = arr.copy()
    return torch.from_numpy(arr).permute(2, 0, 1).float() / 255.0
