import numpy as np
import pytest

from heteraug.core import derive_rng
from heteraug.randnet import (
    RandNetConfig,
    Res2BlockParams,
    forward,
    model_aware_augment,
    res2_forward,
    sample_network,
)

from conftest import random_image


def test_sample_deterministic_and_distinct():
    a = sample_network(derive_rng(1, ["net"]))
    b = sample_network(derive_rng(1, ["net"]))
    c = sample_network(derive_rng(2, ["net"]))
    assert np.array_equal(a.stem, b.stem) and np.array_equal(a.head, b.head)
    assert [x.beta for x in a.blocks] == [x.beta for x in b.blocks]
    assert not np.array_equal(a.stem, c.stem)


def test_shapes():
    net = sample_network(derive_rng(0, []))
    assert net.stem.shape == (3, 3, 3, 16)
    assert len(net.blocks) == 4
    for blk in net.blocks:
        assert blk.group_kernels.shape == (3, 3, 3, 4, 4)
        assert blk.fuse.shape == (16, 16)
    assert net.head.shape == (3, 3, 16, 3)


def test_channels_must_divide():
    with pytest.raises(ValueError):
        sample_network(derive_rng(0, []), c=18)
    assert sample_network(derive_rng(0, []), c=8).channels == 8


def test_beta_distribution():
    betas = []
    for t in range(1000):
        betas += [b.beta for b in sample_network(derive_rng(5, ["beta", t]), c=4).blocks]
    betas = np.array(betas)
    assert betas.min() >= 0.375 and betas.max() <= 0.75
    assert abs(betas.mean() - 0.5625) <= 0.01


def test_weight_scale():
    # sample std of the stem matches gain / sqrt(27)
    net = sample_network(derive_rng(3, []), cfg=RandNetConfig(channels=64))
    assert 0.75 <= net.gain <= 1.25
    assert net.stem.std() == pytest.approx(net.gain / np.sqrt(27), rel=0.1)
    assert net.head.std() == pytest.approx(net.gain / np.sqrt(9 * 64), rel=0.1)


def _block(rng, c=16, beta=0.5):
    g = c // 4
    return Res2BlockParams(rng.normal(size=(3, 3, 3, g, g)), rng.normal(size=(c, c)), beta)


def test_res2_beta_zero_identity(rng):
    x = rng.normal(size=(9, 7, 16))
    np.testing.assert_array_equal(res2_forward(x, _block(rng, beta=0.0)), x)


def test_res2_zero_weights_identity(rng):
    x = rng.normal(size=(5, 5, 16))
    blk = Res2BlockParams(np.zeros((3, 3, 3, 4, 4)), np.zeros((16, 16)), 0.7)
    np.testing.assert_array_equal(res2_forward(x, blk), x)


def test_res2_hand_computed_single_pixel():
    # 4 channels, one per group; 3x3 kernels with only the centre tap set,
    # so on a 1x1 input each group conv is a scalar multiply
    x = np.array([1.0, -2.0, 0.5, 3.0]).reshape(1, 1, 4)
    k = np.zeros((3, 3, 3, 1, 1))
    taps = [2.0, -1.0, 0.5]
    for j, t in enumerate(taps):
        k[j, 1, 1, 0, 0] = t
    fuse = np.arange(16, dtype=float).reshape(4, 4) / 10
    beta = 0.5
    y1 = 1.0
    y2 = max(2.0 * (-2.0 + y1), 0.0)       # relu(2 * -1) = 0
    y3 = max(-1.0 * (0.5 + y2), 0.0)       # relu(-0.5) = 0
    y4 = max(0.5 * (3.0 + y3), 0.0)        # 1.5
    y = np.array([y1, y2, y3, y4])
    expected = x.ravel() + beta * (y @ fuse)
    out = res2_forward(x, Res2BlockParams(k, fuse, beta))
    np.testing.assert_allclose(out.ravel(), expected, rtol=0, atol=1e-15)


def test_res2_rejects_wrong_width(rng):
    with pytest.raises(ValueError):
        res2_forward(rng.normal(size=(4, 4, 8)), _block(rng))


def test_zero_head_identity(rng):
    img = random_image(rng, 13, 17)
    net = sample_network(derive_rng(0, []))
    net.head = np.zeros_like(net.head)
    assert np.array_equal(forward(net, img), img)


def test_betas_zero_and_head_zero_identity(rng):
    img = random_image(rng)
    net = sample_network(derive_rng(1, []))
    for b in net.blocks:
        b.beta = 0.0
    net.head[:] = 0.0
    assert np.array_equal(forward(net, img), img)


def test_forward_fuzz_range_and_shape(rng):
    for t in range(50):
        h, w = int(rng.integers(1, 24)), int(rng.integers(1, 24))
        img = random_image(rng, h, w)
        out = forward(sample_network(derive_rng(2, ["fz", t])), img)
        assert out.shape == img.shape
        assert out.min() >= 0.0 and out.max() <= 1.0


def test_forward_batch_matches_single(rng):
    imgs = np.stack([random_image(rng, 10, 12) for _ in range(3)])
    net = sample_network(derive_rng(3, []))
    batch = forward(net, imgs)
    for i in range(3):
        np.testing.assert_allclose(batch[i], forward(net, imgs[i]), atol=1e-12)


def test_model_aware_ratio(rng):
    img = random_image(rng, 4, 4)
    net = sample_network(derive_rng(4, []), c=4)
    g = derive_rng(5, ["ratio"])
    hits = sum(not np.array_equal(model_aware_augment(img, g, net), img) for _ in range(10_000))
    assert abs(hits / 10_000 - 0.25) <= 0.02
    assert np.array_equal(model_aware_augment(img, g, net, ratio=0.0), img)
    np.testing.assert_array_equal(model_aware_augment(img, g, net, ratio=1.0), forward(net, img))


# Perturbation strength with the default configuration, measured once on the
# 20 natural test crops: median per-pixel |y - x| was 0.210. The band below
# is that value +-50%; a drift outside it means the init scale changed.
PERTURBATION_MEDIAN = 0.210


def test_perturbation_band(natural_images):
    meds = []
    for i, img in enumerate(natural_images):
        net = sample_network(derive_rng(0, ["band", i]))
        meds.append(np.median(np.abs(forward(net, img) - img)))
    m = float(np.median(meds))
    assert 0.5 * PERTURBATION_MEDIAN <= m <= 1.5 * PERTURBATION_MEDIAN, m
