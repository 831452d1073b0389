import numpy as np
import pytest
import torch

from clickmine.backbone import FeaturePyramid
from clickmine.baselines import (
    dot_product_heatmap,
    downsample_mask_any,
    pyramid_patch_match,
    sliding_ssd,
)


def pyramid_from_x1(x1: torch.Tensor, h=64, w=64):
    d = x1.shape[0]
    gen = torch.Generator().manual_seed(9)
    levels = [(4, x1)]
    for s in (8, 16, 32):
        levels.append((s, torch.rand(d, h // s, w // s, generator=gen)))
    return FeaturePyramid(levels=levels, image_size=(h, w))


def block_mask(y0, x0, size=12, h=64, w=64):
    m = np.zeros((h, w), dtype=bool)
    m[y0:y0 + size, x0:x0 + size] = True
    return m


# -------------------------------------------------------- dot_product_heatmap

def test_dot_constant_features_constant_heatmap():
    x1 = np.full((8, 16, 16), 2.0)
    hm = dot_product_heatmap(x1, block_mask(8, 8))
    assert hm.shape == (16, 16)
    assert np.allclose(hm, hm[0, 0])


def test_dot_one_hot_argmax():
    x1 = np.zeros((4, 16, 16))
    # orthogonal unit features everywhere except the mask location
    x1[1, :, :] = 1.0
    x1[0, 3, 5] = 5.0
    x1[1, 3, 5] = 0.0
    mask = block_mask(12, 20, size=4)  # covers cells (3, 5) only
    hm = dot_product_heatmap(x1, mask)
    assert np.unravel_index(np.argmax(hm), hm.shape) == (3, 5)
    assert hm.max() == 1.0 and hm.min() == 0.0


def test_dot_matches_dense_oracle():
    rng = np.random.default_rng(0)
    for _ in range(10):
        x1 = rng.normal(size=(6, 16, 16))
        mask = rng.random((64, 64)) < 0.15
        if not mask.any():
            continue
        hm = dot_product_heatmap(x1, mask)
        # dense recomputation
        cells = downsample_mask_any(mask, 4)
        q = x1[:, cells].mean(axis=1)
        raw = np.zeros((16, 16))
        for r in range(16):
            for c in range(16):
                raw[r, c] = float(q @ x1[:, r, c])
        want = (raw - raw.min()) / (raw.max() - raw.min())
        np.testing.assert_allclose(hm, want, atol=1e-12)
        assert hm.min() >= 0 and hm.max() <= 1


def test_dot_empty_mask_rejected():
    with pytest.raises(ValueError):
        dot_product_heatmap(np.zeros((4, 8, 8)), np.zeros((32, 32), dtype=bool))


def test_downsample_any_semantics():
    m = np.zeros((8, 8), dtype=bool)
    m[5, 2] = True
    cells = downsample_mask_any(m, 4)
    assert cells.shape == (2, 2)
    assert cells[1, 0] and cells.sum() == 1


# ------------------------------------------------------- pyramid_patch_match

def test_ssd_exact_copy_gives_peak_response():
    rng = np.random.default_rng(1)
    feat = rng.normal(size=(5, 20, 20))
    query = feat[:, 7:10, 11:14].copy()  # centered at (8, 12)
    ssd = sliding_ssd(feat, query)
    assert ssd[8, 12] == pytest.approx(0.0, abs=1e-9)
    assert np.unravel_index(np.argmin(ssd), ssd.shape) == (8, 12)


def test_ssd_matches_brute_force_oracle():
    rng = np.random.default_rng(2)
    feat = rng.normal(size=(3, 12, 14))
    query = rng.normal(size=(3, 3, 3))
    got = sliding_ssd(feat, query)
    h, w = 12, 14
    want = np.zeros((h, w))
    for r in range(h):
        for c in range(w):
            acc = 0.0
            for dy in range(3):
                for dx in range(3):
                    rr, cc = r + dy - 1, c + dx - 1
                    if 0 <= rr < h and 0 <= cc < w:
                        acc += ((feat[:, rr, cc] - query[:, dy, dx]) ** 2).sum()
            want[r, c] = acc
    np.testing.assert_allclose(got, want, atol=1e-9)


def test_patch_match_constant_everything_constant_map():
    x1 = torch.full((8, 16, 16), 1.5)
    levels = [(4, x1), (8, torch.full((8, 8, 8), 1.5)),
              (16, torch.full((8, 4, 4), 1.5)), (32, torch.full((8, 2, 2), 1.5))]
    pyr = FeaturePyramid(levels=levels, image_size=(64, 64))
    hm = pyramid_patch_match(pyr, block_mask(20, 20))
    assert hm.shape == (16, 16)
    assert np.allclose(hm, hm[0, 0])


def test_patch_match_exact_copy_scores_one():
    gen = torch.Generator().manual_seed(3)
    x1 = torch.rand(6, 16, 16, generator=gen)
    # plant an exact copy of the query region at another location
    x1[:, 10:13, 10:13] = x1[:, 2:5, 2:5]
    levels = [(4, x1), (8, torch.rand(6, 8, 8, generator=gen)),
              (16, torch.rand(6, 4, 4, generator=gen)),
              (32, torch.rand(6, 2, 2, generator=gen))]
    pyr = FeaturePyramid(levels=levels, image_size=(64, 64))
    mask = block_mask(8, 8, size=12)  # bbox covers cells 2..4 on stride 4
    hm = pyramid_patch_match(pyr, mask)
    assert hm.shape == (16, 16)
    assert (hm >= 0).all() and (hm <= 1).all()
    # stride-4 response is 1.0 at the query's own center (exact zero-SSD match)
    assert hm[3, 3] >= 2 / 3 - 1e-9  # level 4 contributes a full 1.0 there


def test_patch_match_range_and_shape_on_real_sizes():
    gen = torch.Generator().manual_seed(4)
    levels = [(s, torch.rand(4, -(-100 // s), -(-72 // s), generator=gen))
              for s in (4, 8, 16, 32)]
    pyr = FeaturePyramid(levels=levels, image_size=(100, 72))
    mask = np.zeros((100, 72), dtype=bool)
    mask[30:50, 20:40] = True
    hm = pyramid_patch_match(pyr, mask)
    assert hm.shape == (25, 18)
    assert (hm >= 0).all() and (hm <= 1).all()


def test_patch_match_empty_mask_rejected():
    pyr = pyramid_from_x1(torch.rand(4, 16, 16))
    with pytest.raises(ValueError):
        pyramid_patch_match(pyr, np.zeros((64, 64), dtype=bool))
