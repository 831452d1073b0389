"""Procedural distractor samples: small textured shapes grouped by generator
parameters. One library plays both the seed-distractor and the extra-object
roles during synthesis."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image, ImageDraw

SHAPE_KINDS = ("disk", "ellipse", "polygon", "blob")

# saturated, well-separated base hues so copies of different samples are
# visually distinct from each other and from the muted backgrounds
_PALETTE = np.array([
    (214, 40, 40), (247, 127, 0), (252, 191, 73), (67, 170, 139),
    (87, 117, 144), (39, 125, 161), (144, 94, 246), (231, 98, 166),
    (128, 93, 16), (6, 214, 160), (239, 71, 111), (17, 138, 178),
], dtype=np.uint8)


@dataclass
class DistractorSample:
    """A small RGB patch plus its binary mask; group_id ties copies together."""

    patch: np.ndarray
    mask: np.ndarray
    group_id: int

    def __post_init__(self):
        if self.patch.shape[:2] != self.mask.shape:
            raise ValueError(
                f"patch {self.patch.shape[:2]} and mask {self.mask.shape} disagree")
        if not self.mask.any():
            raise ValueError("sample mask is empty")

    @property
    def area(self) -> int:
        return int(self.mask.sum())


def _shape_mask(kind: str, radius: float, rng: np.random.Generator) -> np.ndarray:
    """Render one filled shape on a tight canvas."""
    side = int(2 * radius) + 5
    c = side / 2.0
    if kind == "disk":
        yy, xx = np.mgrid[0:side, 0:side]
        return (xx - c) ** 2 + (yy - c) ** 2 <= radius**2
    if kind == "ellipse":
        ar = rng.uniform(0.45, 0.8)
        yy, xx = np.mgrid[0:side, 0:side]
        ang = rng.uniform(0, np.pi)
        u = (xx - c) * np.cos(ang) + (yy - c) * np.sin(ang)
        v = -(xx - c) * np.sin(ang) + (yy - c) * np.cos(ang)
        return (u / radius) ** 2 + (v / (radius * ar)) ** 2 <= 1.0
    if kind == "polygon":
        n = int(rng.integers(3, 8))
        angles = np.sort(rng.uniform(0, 2 * np.pi, size=n))
        radii = rng.uniform(0.6, 1.0, size=n) * radius
        pts = [(c + r * np.cos(a), c + r * np.sin(a)) for a, r in zip(angles, radii)]
        img = Image.new("L", (side, side), 0)
        ImageDraw.Draw(img).polygon(pts, fill=255)
        return np.asarray(img) > 0
    if kind == "blob":
        k1, k2 = rng.integers(2, 5), rng.integers(5, 9)
        p1, p2 = rng.uniform(0, 2 * np.pi, size=2)
        a1, a2 = rng.uniform(0.05, 0.2), rng.uniform(0.03, 0.1)
        yy, xx = np.mgrid[0:side, 0:side]
        theta = np.arctan2(yy - c, xx - c)
        rr = np.hypot(xx - c, yy - c)
        bound = radius * (1 + a1 * np.sin(k1 * theta + p1) + a2 * np.sin(k2 * theta + p2))
        return rr <= bound
    raise ValueError(f"unknown shape kind {kind!r}")


def _texture(mask: np.ndarray, color: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Color a shape with speckle or stripes, darkened toward the rim."""
    h, w = mask.shape
    patch = np.zeros((h, w, 3), dtype=np.float32)
    base = color.astype(np.float32)
    if rng.random() < 0.5:
        mod = 1.0 + 0.25 * (rng.random((h, w)) - 0.5)
    else:
        freq = rng.uniform(0.4, 1.2)
        phase = rng.uniform(0, 2 * np.pi)
        yy, xx = np.mgrid[0:h, 0:w]
        mod = 1.0 + 0.2 * np.sin(freq * (xx + yy) + phase)
    patch[:] = base[None, None, :] * mod[..., None]
    patch[~mask] = 0
    return np.clip(patch, 0, 255).astype(np.uint8)


def build_library(n_samples: int, seed: int,
                  radius_range: tuple[float, float] = (5.0, 16.0)) -> list[DistractorSample]:
    """Build n procedural samples; sample i gets group_id i."""
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n_samples):
        kind = SHAPE_KINDS[int(rng.integers(0, len(SHAPE_KINDS)))]
        radius = float(rng.uniform(*radius_range))
        mask = _shape_mask(kind, radius, rng)
        color = _PALETTE[i % len(_PALETTE)].copy()
        # jitter repeated palette entries so every sample stays distinct
        color = np.clip(color.astype(int) + rng.integers(-25, 26, size=3), 0, 255)
        patch = _texture(mask, color, rng)
        samples.append(DistractorSample(patch=patch, mask=mask, group_id=i))
    return samples
