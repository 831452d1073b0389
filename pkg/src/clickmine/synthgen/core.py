"""Placement primitives for copy-paste synthesis.

Conventions: images are H x W x 3 uint8, masks are bool H x W, pixel
coordinates are (x, y) = (column, row).
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
from scipy import ndimage

from .library import DistractorSample

COPY_AREA_FRACTION = 0.10
MAX_COPIES = 10

SCALE_RANGE = (0.5, 1.5)
ROTATION_RANGE_DEG = (-30.0, 30.0)
BRIGHTNESS_RANGE = (0.8, 1.2)
CONTRAST_RANGE = (0.8, 1.2)


def distance_map(mask: np.ndarray) -> np.ndarray:
    """Per-pixel Euclidean distance from foreground to the nearest background.

    Background pixels hold 0. A mask with no background pixels at all gets
    +inf on the foreground (no finite distance exists).
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return np.zeros(mask.shape, dtype=np.float64)
    if mask.all():
        return np.full(mask.shape, np.inf, dtype=np.float64)
    return ndimage.distance_transform_edt(mask)


def copy_budget(region_area: float, mean_sample_area: float) -> int:
    """Number of copies to paste for a region, capped at MAX_COPIES.

    ceil(10% of the region area divided by the mean candidate sample area).
    """
    if mean_sample_area <= 0:
        raise ValueError(f"mean_sample_area must be positive, got {mean_sample_area}")
    if region_area < 0:
        raise ValueError(f"region_area must be non-negative, got {region_area}")
    n = math.ceil(COPY_AREA_FRACTION * region_area / mean_sample_area)
    return min(MAX_COPIES, n)


def _geometric(patch: np.ndarray, mask: np.ndarray, flip: bool, scale: float,
               angle: float) -> tuple[np.ndarray, np.ndarray]:
    """Apply flip/scale/rotate identically to patch (bilinear) and mask (nearest)."""
    if flip:
        patch = patch[:, ::-1]
        mask = mask[:, ::-1]
    if scale != 1.0:
        h, w = mask.shape
        th, tw = max(1, round(h * scale)), max(1, round(w * scale))
        zy, zx = th / h, tw / w
        patch = ndimage.zoom(patch, (zy, zx, 1.0), order=1, mode="nearest", grid_mode=True)
        mask = ndimage.zoom(mask.astype(np.uint8), (zy, zx), order=0, mode="grid-constant",
                            grid_mode=True).astype(bool)
        patch = patch[: mask.shape[0], : mask.shape[1]]
    if angle != 0.0:
        patch = ndimage.rotate(patch, angle, reshape=True, order=1, mode="constant", cval=0)
        mask = ndimage.rotate(mask.astype(np.uint8), angle, reshape=True, order=0,
                              mode="constant", cval=0).astype(bool)
    return np.clip(patch, 0, 255), mask


def augment_sample(sample: DistractorSample, rng: np.random.Generator,
                   max_retries: int = 5) -> DistractorSample:
    """Random flip / scale / rotate / brightness / contrast on a sample.

    Geometry hits patch and mask identically; photometry only the patch.
    A draw that empties the mask or pushes its area outside the scale-squared
    bound is retried; after max_retries the sample is returned unchanged.
    """
    base_area = int(sample.mask.sum())
    if base_area == 0:
        raise ValueError("sample mask is empty")
    lo = SCALE_RANGE[0] ** 2 * base_area
    hi = SCALE_RANGE[1] ** 2 * base_area
    for _ in range(max_retries):
        flip = bool(rng.random() < 0.5)
        scale = float(rng.uniform(*SCALE_RANGE))
        angle = float(rng.uniform(*ROTATION_RANGE_DEG))
        brightness = float(rng.uniform(*BRIGHTNESS_RANGE))
        contrast = float(rng.uniform(*CONTRAST_RANGE))

        patch = sample.patch.astype(np.float32)
        patch, mask = _geometric(patch, sample.mask, flip, scale, angle)
        area = int(mask.sum())
        if area == 0 or not (lo <= area <= hi):
            continue
        patch = (patch - 127.5) * contrast + 127.5
        patch = patch * brightness
        patch = np.clip(np.round(patch), 0, 255).astype(np.uint8)
        return replace(sample, patch=patch, mask=mask)
    return replace(sample, patch=sample.patch.copy(), mask=sample.mask.copy())


def _paste_window(image_shape: tuple[int, int], patch_shape: tuple[int, int],
                  center: tuple[int, int]):
    """Overlap between the image and a patch centered at (x, y).

    Returns image-slice and patch-slice pairs; the patch is clipped at
    image borders.
    """
    ih, iw = image_shape
    ph, pw = patch_shape
    x, y = center
    top = y - ph // 2
    left = x - pw // 2
    iy0, iy1 = max(0, top), min(ih, top + ph)
    ix0, ix1 = max(0, left), min(iw, left + pw)
    py0, py1 = iy0 - top, iy1 - top
    px0, px1 = ix0 - left, ix1 - left
    return (slice(iy0, iy1), slice(ix0, ix1)), (slice(py0, py1), slice(px0, px1))


def place_full_mask(image_shape: tuple[int, int], mask: np.ndarray,
                    center: tuple[int, int]) -> np.ndarray:
    """Render a patch-sized mask into a full-image mask centered at (x, y)."""
    out = np.zeros(image_shape, dtype=bool)
    img_sl, patch_sl = _paste_window(image_shape, mask.shape, center)
    out[img_sl] = mask[patch_sl]
    return out


def blend_paste(image: np.ndarray, patch: np.ndarray, mask: np.ndarray,
                center: tuple[int, int], feather: float = 2.0) -> np.ndarray:
    """Paste patch into image at (x, y) through a Gaussian-feathered mask.

    out = image * (1 - g) + patch * g with g the mask blurred by sigma =
    feather (g = mask when feather == 0). Pixels beyond the blur support are
    bit-identical to the input.
    """
    image = np.asarray(image)
    g = mask.astype(np.float64)
    if feather > 0:
        g = ndimage.gaussian_filter(g, sigma=feather)
        g = np.clip(g, 0.0, 1.0)
    out = image.copy()
    img_sl, patch_sl = _paste_window(image.shape[:2], mask.shape, center)
    gw = g[patch_sl][..., None]
    window = image[img_sl].astype(np.float64)
    blended = window * (1.0 - gw) + patch[patch_sl].astype(np.float64) * gw
    out[img_sl] = np.clip(np.round(blended), 0, 255).astype(image.dtype)
    return out


def color_histogram(crop: np.ndarray, bins: int = 8) -> np.ndarray:
    """Concatenated per-channel histograms, each L1-normalised."""
    crop = np.asarray(crop)
    chans = []
    for c in range(3):
        h, _ = np.histogram(crop[..., c], bins=bins, range=(0, 256))
        total = h.sum()
        chans.append(h / total if total else h.astype(np.float64))
    return np.concatenate(chans)


def histogram_gate(before: np.ndarray, after: np.ndarray,
                   threshold: float = 0.001) -> bool:
    """Accept a paste iff it visibly changed the local color statistics.

    True when the L2 distance between the L1-normalised 3 x 8-bin histograms
    of the two crops exceeds the threshold.
    """
    if before.shape != after.shape:
        raise ValueError(f"crop shapes differ: {before.shape} vs {after.shape}")
    d = float(np.linalg.norm(color_histogram(before) - color_histogram(after)))
    return d > threshold
