import numpy as np
import pytest
import torch

from clickmine.backbone import FeaturePyramidNet
from clickmine.clickseg import InstanceMask
from clickmine.pvm import (
    CROP_SIZE,
    ProposalVerifier,
    make_triplet,
    pvm_loss,
    resample_mask_binary,
    square_box,
    square_crop,
)


# ------------------------------------------------------------------- oracles

def zero_pad_bilinear_oracle(source, box, out_size):
    """Scalar-loop bilinear resample of the square-extended box, zero outside."""
    f = source.numpy()
    c, h, w = f.shape
    sx0, sy0, sx1, sy1 = square_box(box)

    def read(y, x):
        if 0 <= y < h and 0 <= x < w:
            return f[:, y, x]
        return np.zeros(c)

    out = np.zeros((c, out_size, out_size))
    for i in range(out_size):
        for j in range(out_size):
            px = sx0 + (j + 0.5) * (sx1 - sx0) / out_size
            py = sy0 + (i + 0.5) * (sy1 - sy0) / out_size
            xf, yf = int(np.floor(px)), int(np.floor(py))
            dx, dy = px - xf, py - yf
            out[:, i, j] = ((1 - dy) * ((1 - dx) * read(yf, xf) + dx * read(yf, xf + 1))
                            + dy * ((1 - dx) * read(yf + 1, xf) + dx * read(yf + 1, xf + 1)))
    return out


# --------------------------------------------------------------- square_crop

def test_square_box_rules():
    assert square_box((0, 0, 10, 10)) == (0, 0, 10, 10)
    x0, y0, x1, y1 = square_box((5, 5, 15, 25))  # 10 x 20 -> side 20
    assert (x1 - x0, y1 - y0) == (20, 20)
    assert (x0 + x1) / 2 == 10 and (y0 + y1) / 2 == 15


def test_square_crop_square_box_identity_case():
    torch.manual_seed(0)
    f = torch.rand(3, 16, 16)
    # integer-aligned 4x4 box, resampled at its own resolution
    out = square_crop(f, (2.0, 3.0, 6.0, 7.0), 4)
    # bin centers at 2.5..5.5 land exactly halfway between cells; compare to oracle
    want = zero_pad_bilinear_oracle(f, (2.0, 3.0, 6.0, 7.0), 4)
    assert np.abs(out.numpy() - want).max() < 1e-6


def test_square_crop_matches_oracle_random():
    rng = np.random.default_rng(0)
    torch.manual_seed(1)
    for _ in range(200):
        h, w = int(rng.integers(6, 30)), int(rng.integers(6, 30))
        f = torch.rand(int(rng.integers(1, 5)), h, w)
        x0 = rng.uniform(-3, w - 2)
        y0 = rng.uniform(-3, h - 2)
        bw = rng.uniform(1, w)
        bh = rng.uniform(1, h)
        out_size = int(rng.integers(2, 9))
        box = (x0, y0, x0 + bw, y0 + bh)
        got = square_crop(f, box, out_size).numpy()
        want = zero_pad_bilinear_oracle(f, box, out_size)
        assert np.abs(got - want).max() < 1e-5


def test_square_crop_degenerate_box():
    with pytest.raises(ValueError):
        square_crop(torch.rand(1, 8, 8), (2, 2, 2, 5), 4)


def test_resample_mask_binary_zero_outside():
    mask = np.ones((10, 10), dtype=bool)
    out = resample_mask_binary(mask, (-5.0, -5.0, 5.0, 5.0), 4)
    assert out.dtype == bool
    assert out[3, 3]  # inside the image
    assert not out[0, 0]  # sampled outside


# ------------------------------------------------------------------ triplets

@pytest.fixture(scope="module")
def stack():
    backbone = FeaturePyramidNet(seed=0)
    verifier = ProposalVerifier(seed=2)
    rng = np.random.default_rng(0)
    image = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
    pyramid = backbone.extract(image)
    return verifier, image, pyramid


def make_mask(h=64, w=64, y0=20, x0=24, bh=16, bw=10):
    m = np.zeros((h, w), dtype=bool)
    m[y0:y0 + bh, x0:x0 + bw] = True
    return m


def test_make_triplet_shapes_and_scale(stack):
    _, image, pyramid = stack
    t = make_triplet(image, pyramid, make_mask())
    assert t.image_crop.shape == (3, CROP_SIZE, CROP_SIZE)
    assert t.feature_crop.shape == (pyramid.width, CROP_SIZE // 4, CROP_SIZE // 4)
    assert t.mask_crop.shape == (1, CROP_SIZE, CROP_SIZE)
    assert t.scale == pytest.approx(16 / CROP_SIZE)  # side = max(10, 16)


def test_embed_deterministic(stack):
    verifier, image, pyramid = stack
    t = make_triplet(image, pyramid, make_mask())
    z1 = verifier.embed(t)
    z2 = verifier.embed(t)
    assert torch.equal(z1.z, z2.z)
    assert torch.isfinite(z1.z).all()


def test_embed_scale_channel_live(stack):
    verifier, image, pyramid = stack
    t = make_triplet(image, pyramid, make_mask())
    from dataclasses import replace
    t_scaled = replace(t, scale=10 * t.scale)
    z1 = verifier.embed(t)
    z2 = verifier.embed(t_scaled)
    assert not torch.equal(z1.z, z2.z)


def test_embed_zero_mask_finite(stack):
    verifier, image, pyramid = stack
    t = make_triplet(image, pyramid, make_mask())
    from dataclasses import replace
    t0 = replace(t, mask_crop=torch.zeros_like(t.mask_crop))
    assert torch.isfinite(verifier.embed(t0).z).all()


# ---------------------------------------------------------------- similarity

def test_similarity_equal_embeddings_is_sigmoid_b(stack):
    verifier, image, pyramid = stack
    z = verifier.embed(make_triplet(image, pyramid, make_mask()))
    expected = float(torch.sigmoid(verifier.score_b.detach()))
    assert verifier.similarity(z, z) == pytest.approx(expected, abs=1e-6)


def test_similarity_symmetric(stack):
    verifier, image, pyramid = stack
    z1 = verifier.embed(make_triplet(image, pyramid, make_mask()))
    z2 = verifier.embed(make_triplet(image, pyramid, make_mask(y0=8, x0=40, bh=12, bw=12)))
    assert verifier.similarity(z1, z2) == verifier.similarity(z2, z1)


# -------------------------------------------------------------------- losses

def test_pvm_loss_positive_identical_embeddings():
    v = ProposalVerifier(seed=0)
    z = torch.rand(4, 8)
    comps = pvm_loss(z, z.clone(), torch.ones(4), v)
    assert float(comps["contrastive"]) == pytest.approx(0.0, abs=1e-9)


def test_pvm_loss_negative_beyond_margin():
    v = ProposalVerifier(seed=0)
    z_a = torch.zeros(3, 8)
    z_b = torch.ones(3, 8)  # distance sqrt(8) > margin 1
    comps = pvm_loss(z_a, z_b, torch.zeros(3), v)
    assert float(comps["contrastive"]) == pytest.approx(0.0, abs=1e-9)


def test_pvm_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    v = ProposalVerifier(seed=0).double()
    n, dim = 5, 6
    za0 = rng.normal(size=(n, dim))
    zb0 = rng.normal(size=(n, dim))
    labels = torch.tensor(rng.integers(0, 2, size=n).astype(np.float64))
    za = torch.tensor(za0, requires_grad=True)
    pvm_loss(za, torch.tensor(zb0), labels, v)["total"].backward()
    an = za.grad.numpy()
    h = 1e-7
    for _ in range(10):
        i, j = rng.integers(0, n), rng.integers(0, dim)
        zp, zm = za0.copy(), za0.copy()
        zp[i, j] += h
        zm[i, j] -= h
        with torch.no_grad():
            fp = float(pvm_loss(torch.tensor(zp), torch.tensor(zb0), labels, v)["total"])
            fm = float(pvm_loss(torch.tensor(zm), torch.tensor(zb0), labels, v)["total"])
        fd = (fp - fm) / (2 * h)
        denom = max(abs(fd), abs(an[i, j]), 1e-12)
        assert abs(fd - an[i, j]) / denom < 1e-4


def test_pvm_loss_rejects_nan():
    v = ProposalVerifier(seed=0)
    z = torch.full((2, 4), float("nan"))
    with pytest.raises(RuntimeError):
        pvm_loss(z, z, torch.ones(2), v)


# -------------------------------------------------------------------- verify

def as_instance(mask, score=0.9):
    from clickmine.masks import mask_bbox
    x0, y0, x1, y1 = mask_bbox(mask)
    ys, xs = np.nonzero(mask)
    return InstanceMask(mask=mask, score=score,
                        source_click=(int(xs[0]), int(ys[0])),
                        box=(x0, y0, x1 + 1, y1 + 1))


def test_verify_empty_proposals(stack):
    verifier, image, pyramid = stack
    target = as_instance(make_mask())
    assert verifier.verify(target, [], pyramid, image) == []


def test_verify_self_pair_kept_untrained(stack):
    # sigmoid(score_b) with the initial b=2 is above 0.5, so the self pair
    # must pass even before training
    verifier, image, pyramid = stack
    target = as_instance(make_mask())
    kept = verifier.verify(target, [target], pyramid, image)
    assert len(kept) == 1
    assert kept[0][1] == pytest.approx(float(torch.sigmoid(verifier.score_b.detach())), abs=1e-6)


def test_verify_per_proposal_independence(stack):
    verifier, image, pyramid = stack
    target = as_instance(make_mask())
    p1 = as_instance(make_mask(y0=10, x0=8, bh=10, bw=10))
    p2 = as_instance(make_mask(y0=40, x0=40, bh=14, bw=9))
    both = verifier.verify(target, [p1, p2], pyramid, image)
    only1 = verifier.verify(target, [p1], pyramid, image)
    only2 = verifier.verify(target, [p2], pyramid, image)
    assert [(id(m), s) for m, s in both] == \
        [(id(m), s) for m, s in only1] + [(id(m), s) for m, s in only2]


def test_verify_order_preserved_and_annotated(stack):
    verifier, image, pyramid = stack
    target = as_instance(make_mask())
    props = [as_instance(make_mask(y0=10 + 6 * i, x0=8 + 4 * i, bh=10, bw=8))
             for i in range(3)]
    kept = verifier.verify(target, props, pyramid, image, threshold=0.0)
    assert [m for m, _ in kept] == props
    assert all(0.0 <= s <= 1.0 for _, s in kept)
