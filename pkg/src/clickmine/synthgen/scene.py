"""Scene assembly: seeds and copies are placed one at a time at the argmax of
the free-space distance map, each paste gated on a visible histogram change,
with per-region area budgeting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .background import StuffRegion, make_regions, render_background
from .core import (
    augment_sample,
    blend_paste,
    copy_budget,
    distance_map,
    histogram_gate,
    place_full_mask,
)
from .library import DistractorSample, build_library


@dataclass
class SceneConfig:
    height: int = 128
    width: int = 128
    library_size: int = 10
    sample_radius: tuple[float, float] = (5.0, 18.0)
    seeds_per_region: tuple[int, int] = (1, 2)
    min_candidates: int = 3
    augment: bool = True
    feather: float = 2.0
    hist_threshold: float = 0.001
    library_seed: int = 7


@dataclass
class Placement:
    """One committed paste, kept so scenes can be recomposited."""

    patch: np.ndarray
    mask: np.ndarray
    center: tuple[int, int]
    group_id: int
    source: str  # "seed" | "copy"
    region_index: int


@dataclass
class SceneInstance:
    mask: np.ndarray
    group_id: int
    source: str
    region_index: int


@dataclass
class SyntheticScene:
    image: np.ndarray
    instances: list[SceneInstance]
    regions: list[StuffRegion]
    rng_seed: int
    placements: list[Placement] = field(default_factory=list)


def _circumradius(mask: np.ndarray) -> float:
    """Max distance from the patch center pixel to any foreground pixel."""
    ph, pw = mask.shape
    cy, cx = ph // 2, pw // 2
    ys, xs = np.nonzero(mask)
    return float(np.hypot(ys - cy, xs - cx).max())


def _placement_distance(free: np.ndarray) -> np.ndarray:
    """Distance map for placement: image borders count as background, so a
    disk of the map's value around any pixel stays inside both the free
    region and the frame."""
    padded = np.pad(free, 1, mode="constant", constant_values=False)
    return distance_map(padded)[1:-1, 1:-1]


def _gate_window(image: np.ndarray, mask_shape: tuple[int, int],
                 center: tuple[int, int]) -> tuple[slice, slice]:
    """Crop window around a paste used by the histogram gate."""
    h, w = image.shape[:2]
    ph, pw = mask_shape
    x, y = center
    pad = 4
    y0, y1 = max(0, y - ph // 2 - pad), min(h, y + ph // 2 + pad + 1)
    x0, x1 = max(0, x - pw // 2 - pad), min(w, x + pw // 2 + pad + 1)
    return slice(y0, y1), slice(x0, x1)


def _try_place(image: np.ndarray, free: np.ndarray, sample: DistractorSample,
               config: SceneConfig, rng: np.random.Generator):
    """One placement attempt at the free-space distance-map argmax.

    Returns (image', placed_full_mask, patch, center) or None when the sample
    does not fit or the histogram gate rejects the paste.
    """
    dm = _placement_distance(free)
    flat_idx = int(np.argmax(dm))  # ties break at the lowest row-major index
    d_max = float(dm.flat[flat_idx])
    if d_max <= 0:
        return None
    cy, cx = np.unravel_index(flat_idx, dm.shape)
    center = (int(cx), int(cy))

    aug = augment_sample(sample, rng) if config.augment else sample
    if _circumradius(aug.mask) >= d_max:
        return None  # does not fit inside the free space disk

    placed = place_full_mask(free.shape, aug.mask, center)
    win = _gate_window(image, aug.mask.shape, center)
    before = image[win]
    image2 = blend_paste(image, aug.patch, aug.mask, center, feather=config.feather)
    if not histogram_gate(before, image2[win], threshold=config.hist_threshold):
        return None
    return image2, placed, aug.patch, center


def populate_region(image: np.ndarray, region_mask: np.ndarray, region_index: int,
                    seed_samples: list[DistractorSample],
                    extra_candidates: list[DistractorSample],
                    config: SceneConfig, rng: np.random.Generator):
    """Place seeds then copies inside one region.

    Seeds are placed first (one instance each). The candidate set is the
    successfully seeded samples topped up from extra_candidates to reach
    config.min_candidates, the per-sample copy count comes from copy_budget
    on the post-seed free area, and copying stops once the pasted copy area
    reaches 10% of the region.

    Returns (image', placements).
    """
    free = region_mask.copy()
    placements: list[Placement] = []

    seeded: list[DistractorSample] = []
    for sample in seed_samples:
        result = _try_place(image, free, sample, config, rng)
        if result is None:
            continue
        image, placed, patch, center = result
        free &= ~placed
        placements.append(Placement(patch, placed, center, sample.group_id,
                                    "seed", region_index))
        seeded.append(sample)

    candidates = list(seeded)
    for extra in extra_candidates:
        if len(candidates) >= config.min_candidates:
            break
        if all(extra.group_id != c.group_id for c in candidates):
            candidates.append(extra)
    if not candidates:
        return image, placements

    mean_area = float(np.mean([c.area for c in candidates]))
    n_per_sample = copy_budget(float(free.sum()), mean_area)

    budget_area = 0.10 * float(region_mask.sum())
    pasted_area = 0.0
    for sample in candidates:
        for _ in range(n_per_sample):
            if pasted_area >= budget_area:
                break
            result = _try_place(image, free, sample, config, rng)
            if result is None:
                continue
            image, placed, patch, center = result
            free &= ~placed
            pasted_area += float(placed.sum())
            placements.append(Placement(patch, placed, center, sample.group_id,
                                        "copy", region_index))
        if pasted_area >= budget_area:
            break
    return image, placements


def _recomposite(base: np.ndarray, placements: list[Placement],
                 config: SceneConfig) -> np.ndarray:
    image = base
    for p in placements:
        patch_mask = _crop_to_patch(p)
        image = blend_paste(image, p.patch, patch_mask, p.center, feather=config.feather)
    return image


def _crop_to_patch(p: Placement) -> np.ndarray:
    """Recover the patch-sized mask from a full-size placed mask."""
    ph, pw = p.patch.shape[:2]
    out = np.zeros((ph, pw), dtype=bool)
    x, y = p.center
    top, left = y - ph // 2, x - pw // 2
    ih, iw = p.mask.shape
    iy0, iy1 = max(0, top), min(ih, top + ph)
    ix0, ix1 = max(0, left), min(iw, left + pw)
    out[iy0 - top: iy1 - top, ix0 - left: ix1 - left] = p.mask[iy0:iy1, ix0:ix1]
    return out


def synthesize_scene(config: SceneConfig, rng_seed: int,
                     library: list[DistractorSample] | None = None) -> SyntheticScene:
    """Generate one scene deterministically from (config, rng_seed)."""
    rng = np.random.default_rng(rng_seed)
    if library is None:
        library = build_library(config.library_size, config.library_seed,
                                config.sample_radius)

    regions = make_regions(config.height, config.width, rng)
    base = render_background(config.height, config.width, regions)
    image = base
    placements: list[Placement] = []

    for ri, region in enumerate(regions):
        lo, hi = config.seeds_per_region
        n_seeds = int(rng.integers(lo, hi + 1))
        order = rng.permutation(len(library))
        seed_samples = [library[i] for i in order[:n_seeds]]
        extras = [library[i] for i in order[n_seeds:]]
        image, region_placements = populate_region(
            image, region.mask, ri, seed_samples, extras, config, rng)
        placements.extend(region_placements)

    # groups introduced purely by copying must have at least two instances;
    # drop singletons and recomposite from the untouched background
    by_group: dict[int, list[Placement]] = {}
    for p in placements:
        by_group.setdefault(p.group_id, []).append(p)
    orphans = {g for g, ps in by_group.items()
               if len(ps) == 1 and ps[0].source == "copy"}
    if orphans:
        placements = [p for p in placements if p.group_id not in orphans]
        image = _recomposite(base, placements, config)

    instances = [SceneInstance(p.mask, p.group_id, p.source, p.region_index)
                 for p in placements]
    return SyntheticScene(image=image, instances=instances, regions=regions,
                          rng_seed=rng_seed, placements=placements)


def validate_scene(scene: SyntheticScene,
                   max_sample_area: float | None = None) -> list[str]:
    """Check every structural invariant; returns human-readable violations."""
    errors: list[str] = []
    h, w = scene.image.shape[:2]

    from scipy import ndimage as ndi

    region_union = np.zeros((h, w), dtype=bool)
    for i, region in enumerate(scene.regions):
        if (region_union & region.mask).any():
            errors.append(f"region {i} overlaps another region")
        region_union |= region.mask
        _, n_comp = ndi.label(region.mask, structure=np.array(
            [[0, 1, 0], [1, 1, 1], [0, 1, 0]]))
        if n_comp != 1:
            errors.append(f"region {i} has {n_comp} 4-connected components")
        if region.area < 0.01 * h * w:
            errors.append(f"region {i} area {region.area} below 1% of image")

    occupancy = np.zeros((h, w), dtype=bool)
    for j, inst in enumerate(scene.instances):
        if not inst.mask.any():
            errors.append(f"instance {j} has empty mask")
            continue
        if (occupancy & inst.mask).any():
            errors.append(f"instance {j} overlaps a previous instance")
        occupancy |= inst.mask
        inside = [i for i, r in enumerate(scene.regions)
                  if (inst.mask & r.mask).sum() == inst.mask.sum()]
        if len(inside) != 1:
            errors.append(f"instance {j} not contained in exactly one region "
                          f"(matches {inside})")

    if max_sample_area is not None:
        for ri, region in enumerate(scene.regions):
            copy_area = sum(int(i.mask.sum()) for i in scene.instances
                            if i.region_index == ri and i.source == "copy")
            limit = 0.10 * region.area + max_sample_area
            if copy_area > limit:
                errors.append(f"region {ri} pasted copy area {copy_area} exceeds "
                              f"budget {limit:.1f}")

    sizes: dict[int, int] = {}
    has_copy: dict[int, bool] = {}
    for inst in scene.instances:
        sizes[inst.group_id] = sizes.get(inst.group_id, 0) + 1
        has_copy[inst.group_id] = has_copy.get(inst.group_id, False) or inst.source == "copy"
    for g, n in sizes.items():
        if has_copy[g] and n < 2:
            errors.append(f"group {g} has copies but only {n} instance")
    return errors
