"""Procedural backgrounds: the image plane is partitioned into 2-4 stuff
regions (horizontal bands, optionally one split vertically), each rendered
with muted value-noise texture."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

REGION_LABELS = ("ground", "wall", "sky", "water", "ceiling")

# muted base colors so pasted objects stay salient
_LABEL_COLORS = {
    "sky": (168, 196, 222),
    "ceiling": (205, 200, 190),
    "wall": (176, 168, 156),
    "ground": (146, 126, 102),
    "water": (110, 148, 158),
}
_TOP_LABELS = ("sky", "ceiling")
_BOTTOM_LABELS = ("ground", "water")


@dataclass
class StuffRegion:
    """A single 4-connected background region eligible for pasting."""

    mask: np.ndarray
    label: str
    texture_seed: int

    def __post_init__(self):
        if self.label not in REGION_LABELS:
            raise ValueError(f"unknown region label {self.label!r}")

    @property
    def area(self) -> int:
        return int(self.mask.sum())


def make_regions(height: int, width: int, rng: np.random.Generator) -> list[StuffRegion]:
    """Partition the frame into 2-4 band-shaped regions with labels."""
    n_bands = int(rng.integers(2, 4))
    # band boundaries with every band at least 20% of the height
    min_frac = 0.2
    while True:
        cuts = np.sort(rng.uniform(min_frac, 1.0 - min_frac, size=n_bands - 1))
        edges = np.concatenate(([0.0], cuts, [1.0]))
        if np.all(np.diff(edges) >= min_frac - 1e-9):
            break
    rows = np.round(edges * height).astype(int)

    regions: list[StuffRegion] = []
    band_masks = []
    for i in range(n_bands):
        m = np.zeros((height, width), dtype=bool)
        m[rows[i]: rows[i + 1], :] = True
        band_masks.append(m)

    # optionally split one middle-or-bottom band vertically (keeps total <= 4)
    if n_bands < 4 and rng.random() < 0.5:
        idx = int(rng.integers(1, n_bands))
        col = int(rng.uniform(0.35, 0.65) * width)
        left = band_masks[idx].copy()
        right = band_masks[idx].copy()
        left[:, col:] = False
        right[:, :col] = False
        if left.any() and right.any():
            band_masks[idx: idx + 1] = [left, right]

    for i, m in enumerate(band_masks):
        if i == 0:
            label = _TOP_LABELS[int(rng.integers(0, 2))]
        elif i == len(band_masks) - 1:
            label = _BOTTOM_LABELS[int(rng.integers(0, 2))]
        else:
            label = "wall"
        regions.append(StuffRegion(mask=m, label=label,
                                   texture_seed=int(rng.integers(0, 2**31 - 1))))
    return regions


def _value_noise(height: int, width: int, rng: np.random.Generator,
                 cells: int = 6) -> np.ndarray:
    """Smooth noise in [-1, 1]: a coarse random grid upsampled bilinearly."""
    grid = rng.random((cells, cells)) * 2.0 - 1.0
    zoomed = ndimage.zoom(grid, (height / cells, width / cells), order=1,
                          mode="nearest", grid_mode=True)
    return zoomed[:height, :width]


def render_background(height: int, width: int,
                      regions: list[StuffRegion]) -> np.ndarray:
    """Render all regions as textured fills; returns H x W x 3 uint8."""
    image = np.zeros((height, width, 3), dtype=np.uint8)
    for region in regions:
        rng = np.random.default_rng(region.texture_seed)
        base = np.array(_LABEL_COLORS[region.label], dtype=np.float64)
        noise = _value_noise(height, width, rng)
        fine = rng.random((height, width)) * 2.0 - 1.0
        shade = 1.0 + 0.12 * noise + 0.03 * fine
        tex = np.clip(base[None, None, :] * shade[..., None], 0, 255)
        image[region.mask] = tex[region.mask].astype(np.uint8)
    return image
