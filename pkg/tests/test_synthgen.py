import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clickmine.synthgen import (
    DatasetConfig,
    SceneConfig,
    augment_sample,
    blend_paste,
    build_library,
    copy_budget,
    distance_map,
    generate_dataset,
    histogram_gate,
    load_manifest,
    load_scene,
    populate_region,
    synthesize_scene,
    validate_scene,
)
from clickmine.synthgen.core import color_histogram
from clickmine.synthgen.library import DistractorSample


# ---------------------------------------------------------------- oracles

def brute_force_distance(mask):
    """All-pairs nearest-background distance; the independent oracle."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    out = np.zeros((h, w), dtype=np.float64)
    bg = np.argwhere(~mask)
    for r in range(h):
        for c in range(w):
            if not mask[r, c]:
                continue
            if bg.size == 0:
                out[r, c] = np.inf
            else:
                d2 = (bg[:, 0] - r) ** 2 + (bg[:, 1] - c) ** 2
                out[r, c] = np.sqrt(d2.min())
    return out


# ------------------------------------------------------------ distance_map

def test_distance_map_empty():
    assert not distance_map(np.zeros((5, 5), dtype=bool)).any()


def test_distance_map_single_pixel():
    m = np.zeros((5, 5), dtype=bool)
    m[2, 2] = True
    dm = distance_map(m)
    assert dm[2, 2] == 1.0
    assert dm.sum() == 1.0


def test_distance_map_matches_brute_force():
    rng = np.random.default_rng(42)
    for _ in range(200):
        h, w = rng.integers(1, 33, size=2)
        m = rng.random((h, w)) < rng.uniform(0.1, 0.9)
        np.testing.assert_allclose(distance_map(m), brute_force_distance(m),
                                   rtol=0, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 20), st.integers(1, 20), st.integers(0, 2**31 - 1))
def test_distance_map_property(h, w, seed):
    m = np.random.default_rng(seed).random((h, w)) < 0.5
    np.testing.assert_allclose(distance_map(m), brute_force_distance(m),
                               rtol=0, atol=1e-9)


# ------------------------------------------------------------- copy_budget

def test_copy_budget_direct():
    assert copy_budget(400, 10) == 4
    assert copy_budget(100000, 10) == 10  # capped
    assert copy_budget(0, 10) == 0


def test_copy_budget_rejects_zero_mean():
    with pytest.raises(ValueError):
        copy_budget(100, 0)


# ---------------------------------------------------------- augment_sample

def disk_sample(radius=10, group_id=0):
    side = 2 * radius + 5
    yy, xx = np.mgrid[0:side, 0:side]
    mask = (xx - side / 2) ** 2 + (yy - side / 2) ** 2 <= radius**2
    patch = np.zeros((side, side, 3), dtype=np.uint8)
    patch[mask] = (200, 60, 60)
    return DistractorSample(patch=patch, mask=mask, group_id=group_id)


def test_augment_preserves_mask_binary_and_pairing():
    rng = np.random.default_rng(1)
    s = disk_sample()
    out = augment_sample(s, rng)
    assert out.mask.dtype == bool
    assert out.mask.any()
    assert out.patch.shape[:2] == out.mask.shape


def test_augment_area_ratio_bound():
    rng = np.random.default_rng(7)
    s = disk_sample(radius=12)
    base = s.mask.sum()
    for _ in range(100):
        out = augment_sample(s, rng)
        ratio = out.mask.sum() / base
        assert 0.25 <= ratio <= 2.25


def test_augment_flip_symmetry():
    s = disk_sample(radius=6)
    flipped = s.mask[:, ::-1]
    assert flipped.sum() == s.mask.sum()


# -------------------------------------------------------------- blend_paste

def test_blend_zero_mask_is_identity():
    rng = np.random.default_rng(3)
    img = rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
    patch = rng.integers(0, 256, size=(9, 9, 3), dtype=np.uint8)
    out = blend_paste(img, patch, np.zeros((9, 9), dtype=bool), (16, 16))
    assert np.array_equal(out, img)


def test_blend_feather_zero_is_copy():
    img = np.zeros((32, 32, 3), dtype=np.uint8)
    patch = np.full((9, 9, 3), 200, dtype=np.uint8)
    mask = np.zeros((9, 9), dtype=bool)
    mask[2:7, 2:7] = True
    out = blend_paste(img, patch, mask, (16, 16), feather=0)
    ys, xs = np.nonzero(mask)
    for r, c in zip(ys, xs):
        assert tuple(out[16 - 4 + r, 16 - 4 + c]) == (200, 200, 200)


def test_blend_feather_boundary_between_values():
    img = np.zeros((64, 64, 3), dtype=np.uint8)
    patch = np.full((21, 21, 3), 200, dtype=np.uint8)
    yy, xx = np.mgrid[0:21, 0:21]
    mask = (xx - 10) ** 2 + (yy - 10) ** 2 <= 8**2
    out = blend_paste(img, patch, mask, (32, 32), feather=2.0)
    # sample a boundary pixel just outside the disk: strictly between 0 and 200
    val = out[32 - 10 + 1, 32]  # one row below the top of the disk bbox
    assert 0 < val[0] < 200


def test_blend_far_pixels_bit_identical():
    rng = np.random.default_rng(5)
    img = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
    patch = np.full((9, 9, 3), 255, dtype=np.uint8)
    mask = np.ones((9, 9), dtype=bool)
    out = blend_paste(img, patch, mask, (32, 32), feather=2.0)
    # blur support is bounded; corners must be untouched
    assert np.array_equal(out[:10, :10], img[:10, :10])
    assert np.array_equal(out[-10:, -10:], img[-10:, -10:])


def test_blend_clips_at_border():
    img = np.zeros((16, 16, 3), dtype=np.uint8)
    patch = np.full((9, 9, 3), 100, dtype=np.uint8)
    mask = np.ones((9, 9), dtype=bool)
    out = blend_paste(img, patch, mask, (0, 0), feather=0)
    assert out[0, 0, 0] == 100
    assert out.shape == img.shape


# ---------------------------------------------------------- histogram_gate

def test_gate_identical_crops():
    rng = np.random.default_rng(11)
    crop = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
    assert not histogram_gate(crop, crop.copy())


def test_gate_inverted_crop():
    rng = np.random.default_rng(12)
    crop = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
    assert histogram_gate(crop, 255 - crop)


def test_gate_matches_scalar_recomputation():
    rng = np.random.default_rng(13)
    for _ in range(20):
        a = rng.integers(0, 256, size=(12, 12, 3), dtype=np.uint8)
        b = rng.integers(0, 256, size=(12, 12, 3), dtype=np.uint8)
        # independent recomputation of the normalized-histogram distance
        dist_sq = 0.0
        for c in range(3):
            ha = np.bincount(a[..., c].ravel() // 32, minlength=8) / a[..., c].size
            hb = np.bincount(b[..., c].ravel() // 32, minlength=8) / b[..., c].size
            dist_sq += ((ha - hb) ** 2).sum()
        expected = np.sqrt(dist_sq) > 0.001
        assert histogram_gate(a, b) == expected
        got = np.linalg.norm(color_histogram(a) - color_histogram(b))
        assert got == pytest.approx(np.sqrt(dist_sq), abs=1e-12)


# -------------------------------------------------------- synthesize_scene

def test_scene_zero_budget_only_seeds():
    # a library of huge-area samples forces copy_budget to 0
    cfg = SceneConfig(height=64, width=64, augment=False, seeds_per_region=(0, 0))
    side = 40
    mask = np.ones((side, side), dtype=bool)
    patch = np.full((side, side, 3), 220, dtype=np.uint8)
    big = DistractorSample(patch=patch, mask=mask, group_id=0)
    image = np.zeros((64, 64, 3), dtype=np.uint8)
    region = np.zeros((64, 64), dtype=bool)
    region[8:56, 8:56] = True  # area 2304; 10% = 230 << sample area 1600
    rng = np.random.default_rng(0)
    _, placements = populate_region(image, region, 0, [], [big], cfg, rng)
    assert placements == []


def test_first_copy_at_square_center():
    cfg = SceneConfig(height=64, width=64, augment=False)
    sample = disk_sample(radius=4)
    image = np.zeros((64, 64, 3), dtype=np.uint8)
    region = np.zeros((64, 64), dtype=bool)
    region[10:31, 20:41] = True  # 21x21 square, center (30, 20)
    rng = np.random.default_rng(0)
    _, placements = populate_region(image, region, 0, [], [sample], cfg, rng)
    assert placements, "no copy placed"
    assert placements[0].center == (30, 20)


def test_generated_scenes_validate():
    cfg = SceneConfig()
    lib = build_library(cfg.library_size, cfg.library_seed, cfg.sample_radius)
    max_area = max(s.area for s in lib) * 2.25
    for seed in range(10):
        scene = synthesize_scene(cfg, seed, library=lib)
        assert validate_scene(scene, max_sample_area=max_area) == []


def test_scene_determinism():
    cfg = SceneConfig()
    a = synthesize_scene(cfg, 99)
    b = synthesize_scene(cfg, 99)
    assert np.array_equal(a.image, b.image)
    assert len(a.instances) == len(b.instances)
    for ia, ib in zip(a.instances, b.instances):
        assert np.array_equal(ia.mask, ib.mask)
        assert (ia.group_id, ia.source) == (ib.group_id, ib.source)


# --------------------------------------------------------- generate_dataset

def test_dataset_empty(tmp_path):
    path = generate_dataset(DatasetConfig(), 0, 0, tmp_path / "empty")
    manifest = load_manifest(path)
    assert manifest["scenes"] == []


def test_dataset_deterministic_bytes(tmp_path):
    cfg = DatasetConfig(scene=SceneConfig(height=64, width=64))
    p1 = generate_dataset(cfg, 3, 5, tmp_path / "a")
    p2 = generate_dataset(cfg, 3, 5, tmp_path / "b")
    assert p1.read_bytes() == p2.read_bytes()
    for i in range(3):
        img1 = (tmp_path / "a" / f"images/{i:05d}.png").read_bytes()
        img2 = (tmp_path / "b" / f"images/{i:05d}.png").read_bytes()
        assert img1 == img2


def test_dataset_round_trip(tmp_path):
    cfg = DatasetConfig(scene=SceneConfig(height=64, width=64))
    path = generate_dataset(cfg, 2, 9, tmp_path / "ds")
    manifest = load_manifest(path)
    assert len(manifest["scenes"]) == 2
    scene = load_scene(manifest, 0, tmp_path / "ds")
    direct = synthesize_scene(cfg.scene, scene.rng_seed)
    assert np.array_equal(scene.image, direct.image)
    assert len(scene.instances) == len(direct.instances)
    for a, b in zip(scene.instances, direct.instances):
        assert np.array_equal(a.mask, b.mask)


def test_dataset_png_mask_format(tmp_path):
    cfg = DatasetConfig(scene=SceneConfig(height=64, width=64), mask_format="png")
    path = generate_dataset(cfg, 1, 3, tmp_path / "ds")
    manifest = load_manifest(path)
    rec = manifest["scenes"][0]
    assert all("mask_path" in e for e in rec["instances"])
    scene = load_scene(manifest, 0, tmp_path / "ds")
    assert all(i.mask.dtype == bool for i in scene.instances)


def test_dataset_size_histogram_spans_small_and_medium(tmp_path):
    cfg = DatasetConfig(scene=SceneConfig(height=256, width=256,
                                          sample_radius=(6.0, 24.0)))
    path = generate_dataset(cfg, 100, 17, tmp_path / "ds")
    manifest = load_manifest(path)
    areas = []
    for i in range(len(manifest["scenes"])):
        scene = load_scene(manifest, i, tmp_path / "ds")
        areas += [int(inst.mask.sum()) for inst in scene.instances]
    areas = np.array(areas)
    assert (areas <= 32 * 32).any()
    assert ((areas > 32 * 32) & (areas <= 96 * 96)).any()
