import numpy as np
import pytest
from scipy.ndimage import laplace
from scipy.signal import convolve2d

from fovlab.foveation import (FoveationParams, blur_image, build_belt_masks, foveate_image,
                              gaussian_kernel1d)
from fovlab.warp import FixationPoint


def random_params(rng):
    n = int(rng.integers(1, 7))
    gaps = rng.uniform(8, 40, n - 1)
    bounds = tuple(np.cumsum(gaps))
    sigmas = tuple(np.sort(rng.uniform(0, 5, n)))
    blend = float(rng.uniform(0, 0.99 * gaps.min())) if n > 1 else float(rng.uniform(0, 5))
    return FoveationParams(n, bounds, sigmas, blend)


class TestParams:
    def test_geometric_defaults(self):
        fp = FoveationParams.geometric()
        assert fp == FoveationParams()
        assert fp.belt_bounds == (20.0, 40.0, 80.0, 160.0)
        assert fp.sigmas == (0.0, 1.0, 2.0, 4.0, 8.0)

    @pytest.mark.parametrize("kwargs", [
        dict(n_belts=3, belt_bounds=(10.0,), sigmas=(0, 1, 2)),
        dict(n_belts=3, belt_bounds=(20.0, 10.0), sigmas=(0, 1, 2)),
        dict(n_belts=3, belt_bounds=(10.0, 20.0), sigmas=(0, 2, 1)),
        dict(n_belts=3, belt_bounds=(10.0, 20.0), sigmas=(0, 1, 2), blend_width=10.0),
        dict(n_belts=2, belt_bounds=(10.0,), sigmas=(-1, 1)),
    ])
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ValueError):
            FoveationParams(**kwargs)


class TestMasks:
    @pytest.mark.parametrize("seed", range(10))
    def test_partition_of_unity(self, seed):
        rng = np.random.default_rng(seed)
        fp = random_params(rng)
        fix = FixationPoint(*rng.uniform(-20, 120, 2))
        m = build_belt_masks(97, 83, fix, fp)
        assert m.shape == (fp.n_belts, 83, 97)
        assert np.max(np.abs(m.sum(0) - 1.0)) < 1e-6
        assert m.min() >= 0.0 and m.max() <= 1.0

    def test_single_belt(self):
        m = build_belt_masks(10, 7, FixationPoint(3, 3), FoveationParams(1, (), (0.0,), 0.0))
        assert np.array_equal(m, np.ones((1, 7, 10)))

    def test_hard_belts(self):
        fp = FoveationParams(4, (5.0, 10.0, 15.0), (0, 1, 2, 3), 0.0)
        m = build_belt_masks(40, 1, FixationPoint(0, 0), fp)
        assert np.array_equal(m[:, 0, 12], [0, 0, 1, 0])
        assert np.array_equal(m[:, 0, 2], [1, 0, 0, 0])
        assert np.array_equal(m[:, 0, 30], [0, 0, 0, 1])

    def test_midway_crossfade(self):
        fp = FoveationParams(3, (10.0, 20.0), (0, 1, 2), 3.0)
        m = build_belt_masks(30, 1, FixationPoint(0, 0), fp)
        assert np.array_equal(m[:, 0, 10], [0.5, 0.5, 0.0])
        assert np.array_equal(m[:, 0, 20], [0.0, 0.5, 0.5])
        # linear ramp: a quarter of the way through the blend region
        assert m[1, 0, 8] == pytest.approx((8 - 7) / 6)


class TestBlur:
    @pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0, 3.7])
    def test_kernel(self, sigma):
        k = gaussian_kernel1d(sigma)
        assert len(k) == 2 * int(np.ceil(4 * sigma)) + 1
        assert k.sum() == pytest.approx(1.0, abs=1e-15)
        assert np.array_equal(k, k[::-1])

    @pytest.mark.parametrize("sigma", [1.0, 2.5])
    def test_separable_equals_2d(self, sigma):
        img = np.random.default_rng(0).random((40, 31))
        k = gaussian_kernel1d(sigma)
        ref = convolve2d(img, np.outer(k, k), mode="same", boundary="symm")
        out = blur_image(img, sigma, axes=(0, 1))
        assert np.max(np.abs(out - ref)) < 1e-6

    @pytest.mark.parametrize("sigma", [0.0, 1.0, 2.0, 4.0, 8.0])
    def test_mean_preserved_per_level(self, sigma):
        img = np.random.default_rng(1).random((64, 48, 3))
        out = blur_image(img, sigma)
        assert np.allclose(out.mean((0, 1)), img.mean((0, 1)), atol=1e-6)


class TestFoveate:
    def test_all_sigma_zero_identity(self):
        img = np.random.default_rng(2).random((50, 60, 3)).astype(np.float32)
        fp = FoveationParams(4, (5.0, 10.0, 20.0), (0, 0, 0, 0), 2.0)
        assert np.array_equal(foveate_image(img, FixationPoint(20, 30), fp), img)

    def test_constant_image(self):
        img = np.full((64, 64, 3), 0.3, np.float32)
        out = foveate_image(img, FixationPoint(10, 40), FoveationParams.geometric(5, 8.0, 1.5, 2.0))
        assert np.allclose(out, 0.3, atol=1e-6)

    def test_impulse_second_moment(self):
        fp = FoveationParams(3, (10.0, 60.0), (0.0, 2.0, 4.0), 4.0)
        img = np.zeros((80, 120, 1))
        img[40, 40 + 35] = 1.0  # eccentricity 35, deep inside the sigma=2 belt
        out = foveate_image(img, FixationPoint(40, 40), fp)[:, :, 0]
        ys, xs = np.mgrid[0:80, 0:120]
        mass = out.sum()
        assert mass == pytest.approx(1.0, abs=1e-9)
        var_x = (out * (xs - 75) ** 2).sum() / mass
        var_y = (out * (ys - 40) ** 2).sum() / mass
        assert var_x == pytest.approx(4.0, rel=0.02)
        assert var_y == pytest.approx(4.0, rel=0.02)

    def test_belt0_exact(self):
        img = np.random.default_rng(3).random((100, 100, 3)).astype(np.float32)
        fix = FixationPoint(50, 50)
        fp = FoveationParams.geometric(4, 20.0, 2.0, 4.0)
        out = foveate_image(img, fix, fp)
        m = build_belt_masks(100, 100, fix, fp)
        inner = m[0] == 1.0
        assert inner.sum() > 500
        assert np.array_equal(out[inner], img[inner])

    def test_monotone_degradation(self):
        img = np.random.default_rng(4).random((160, 160)).astype(np.float64)
        fix = FixationPoint(80, 80)
        fp = FoveationParams.geometric(4, 15.0, 1.0, 3.0)
        out = foveate_image(img[:, :, None], fix, fp)[:, :, 0]
        m = build_belt_masks(160, 160, fix, fp)
        lap = laplace(out) ** 2
        inner = lap[m[0] == 1].mean()
        outer = lap[m[-1] == 1].mean()
        assert outer <= inner

    def test_matches_weighted_sum(self):
        img = np.random.default_rng(5).random((48, 40, 3))
        fix = FixationPoint(12.5, 30.2)
        fp = FoveationParams(3, (8.0, 20.0), (0.0, 1.0, 3.0), 2.0)
        m = build_belt_masks(40, 48, fix, fp)
        ref = sum(m[i][:, :, None] * blur_image(img, s) for i, s in enumerate(fp.sigmas))
        out = foveate_image(img, fix, fp)
        assert np.max(np.abs(out - np.clip(ref, 0, 1))) < 1e-12

    def test_planes_layout(self):
        img = np.random.default_rng(6).random((30, 30, 2)).astype(np.float32)
        fix = FixationPoint(15, 15)
        fp = FoveationParams(2, (6.0,), (0.0, 2.0), 1.0)
        a = foveate_image(img, fix, fp)
        b = foveate_image(np.moveaxis(img, 2, 0), fix, fp, channels_last=False)
        assert np.allclose(np.moveaxis(b, 0, 2), a, atol=1e-6)
