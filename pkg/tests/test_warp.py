import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fovlab.warp import (FixationPoint, WarpDomainError, WarpParams, build_sampling_grid, cmf,
                         ecc_of_radius, radius_of_ecc, warp_image)

DEFAULT = WarpParams(1.0, 20.0, 20.0)
SWEEP = [WarpParams(1.0, f, k) for f in (15, 20, 45) for k in (-15, -7.5, 5, 20, 40, 50)
         if f + k > 0]


def brute_force_warp(img, fix, c, r_fov, k):
    """Per-pixel evaluation of the radial map and a bilinear lookup, no vectorization."""
    h, w, ch = img.shape
    out = np.zeros_like(img, dtype=np.float64)
    for row in range(h):
        for col in range(w):
            dx, dy = col - fix[0], row - fix[1]
            r = math.sqrt(dx * dx + dy * dy)
            if r < r_fov:
                e = r / c
            else:
                e = ((r + k) ** 2 / (2 * (r_fov + k)) + (r_fov - k) / 2) / c
            sx = fix[0] + (e / r * dx if r > 0 else 0.0)
            sy = fix[1] + (e / r * dy if r > 0 else 0.0)
            if sx < 0 or sy < 0 or sx > w - 1 or sy > h - 1:
                continue
            x0, y0 = int(math.floor(sx)), int(math.floor(sy))
            x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
            fx, fy = sx - x0, sy - y0
            out[row, col] = ((1 - fx) * (1 - fy) * img[y0, x0] + fx * (1 - fy) * img[y0, x1]
                             + (1 - fx) * fy * img[y1, x0] + fx * fy * img[y1, x1])
    return out


def checkerboard(n=16, cell=2, channels=3):
    yy, xx = np.mgrid[0:n, 0:n]
    board = ((yy // cell + xx // cell) % 2).astype(np.float32)
    out = np.repeat(board[:, :, None], channels, axis=2)
    out[:, :, 0] *= 0.8
    return out


class TestParams:
    def test_rejects_singular(self):
        with pytest.raises(WarpDomainError):
            WarpParams(1.0, 15.0, -15.0)

    @pytest.mark.parametrize("kwargs", [dict(c_scale=0), dict(r_fov=-1), dict(k_shape=math.nan)])
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(WarpDomainError):
            WarpParams(**kwargs)


class TestCMF:
    def test_examples(self):
        assert cmf(10, DEFAULT) == 1.0
        assert cmf(20, DEFAULT) == 1.0
        assert cmf(64, DEFAULT) == pytest.approx(40 / 84, rel=1e-12)

    def test_negative_radius(self):
        with pytest.raises(WarpDomainError):
            cmf(-1, DEFAULT)

    @pytest.mark.parametrize("p", SWEEP, ids=str)
    def test_reciprocal_of_slope(self, p):
        h = 1e-4
        for r in np.linspace(0.5, 200, 97):
            if abs(r - p.r_fov) < 10 * h:
                continue
            slope = (ecc_of_radius(r + h, p) - ecc_of_radius(r - h, p)) / (2 * h)
            assert 1.0 / cmf(r, p) == pytest.approx(slope, rel=1e-5)


class TestEccentricity:
    def test_examples(self):
        assert ecc_of_radius(10, DEFAULT) == 10.0
        assert ecc_of_radius(64, DEFAULT) == pytest.approx(88.2, abs=1e-12)
        assert ecc_of_radius(40, WarpParams(1.0, 20.0, -7.5)) == pytest.approx(56.0, abs=1e-12)
        assert ecc_of_radius(0, DEFAULT) == 0.0

    def test_inverse_examples(self):
        assert radius_of_ecc(5, DEFAULT) == 5.0
        assert radius_of_ecc(20, DEFAULT) == 20.0
        assert radius_of_ecc(88.2, DEFAULT) == pytest.approx(64.0, abs=1e-12)

    @pytest.mark.parametrize("p", SWEEP, ids=str)
    def test_branches_meet(self, p):
        eps = 1e-7
        jump = abs(ecc_of_radius(p.r_fov - eps, p) - ecc_of_radius(p.r_fov + eps, p))
        # the map itself moves by 2 eps / C across the gap; anything beyond is a jump
        assert abs(jump - 2 * eps / p.c_scale) < 1e-9
        quad = ((p.r_fov + p.k_shape) ** 2 / (2 * (p.r_fov + p.k_shape))
                + (p.r_fov - p.k_shape) / 2)
        assert abs(quad - p.r_fov) < 1e-9

    @pytest.mark.parametrize("p", SWEEP, ids=str)
    def test_slopes_meet(self, p):
        h = 1e-6
        rf = p.r_fov
        left = (ecc_of_radius(rf, p) - ecc_of_radius(rf - h, p)) / h
        right = (ecc_of_radius(rf + h, p) - ecc_of_radius(rf, p)) / h
        assert abs(left - right) < 1e-6

    @pytest.mark.parametrize("p", SWEEP, ids=str)
    def test_round_trip(self, p):
        radius = 0.5 * math.hypot(128, 128)
        r = np.random.default_rng(0).uniform(0, 2 * radius, 1000)
        back = radius_of_ecc(ecc_of_radius(r, p), p)
        assert np.all(np.abs(back - r) < 1e-9 * np.maximum(1.0, r))

    @pytest.mark.parametrize("p", SWEEP, ids=str)
    def test_expansion_and_monotone(self, p):
        r = np.linspace(0, 300, 3001)
        e = ecc_of_radius(r, p)
        assert np.all(np.diff(e) > 0)
        if p.k_shape <= p.r_fov:
            assert np.all(e >= r - 1e-12)

    @settings(max_examples=200, deadline=None)
    @given(c=st.floats(0.2, 5), r_fov=st.floats(0, 60), k=st.floats(-59, 80),
           r=st.floats(0, 500))
    def test_inverse_property(self, c, r_fov, k, r):
        if r_fov + k <= 0.5:
            return
        p = WarpParams(c, r_fov, k)
        assert radius_of_ecc(ecc_of_radius(r, p), p) == pytest.approx(r, rel=1e-9, abs=1e-9)


class TestGrid:
    def test_examples(self):
        fix = FixationPoint(64, 64)
        g = build_sampling_grid(129, 128, fix, DEFAULT, 128, 128)
        assert (g.src_x[64, 64], g.src_y[64, 64]) == (64.0, 64.0)
        assert g.src_x[64, 84] == pytest.approx(84.0) and g.src_y[64, 84] == 64.0
        assert g.src_x[64, 128] == pytest.approx(152.2, abs=1e-9)
        assert g.fill_mask[64, 128]
        assert not g.fill_mask[64, 84]
        assert g.src_x.shape == (128, 129)

    def test_fixed_point_fractional(self):
        fix = FixationPoint(3.0, 7.0)
        g = build_sampling_grid(10, 12, fix, WarpParams(1.3, 2.0, 0.5), 10, 12)
        assert g.src_x[7, 3] == 3.0 and g.src_y[7, 3] == 7.0

    def test_radial_monotone(self):
        fix = FixationPoint(32, 32)
        g = build_sampling_grid(64, 64, fix, DEFAULT, 64, 64)
        ray = np.hypot(g.src_x[32, 32:] - 32, g.src_y[32, 32:] - 32)
        assert np.all(np.diff(ray) > 0)
        diag = np.hypot(np.diag(g.src_x)[32:] - 32, np.diag(g.src_y)[32:] - 32)
        assert np.all(np.diff(diag) > 0)


class TestWarpImage:
    def test_identity_on_linear_branch(self):
        img = np.random.default_rng(1).random((40, 50, 3)).astype(np.float32)
        p = WarpParams(1.0, math.ceil(math.hypot(50, 40)), 5.0)
        out = warp_image(img, FixationPoint(25, 20), p)
        assert np.array_equal(out, img)

    def test_constant_image(self):
        img = np.full((33, 33, 3), 0.37, np.float32)
        fix = FixationPoint(16, 16)
        out = warp_image(img, fix, DEFAULT)
        mask = build_sampling_grid(33, 33, fix, DEFAULT, 33, 33).fill_mask
        assert np.allclose(out[~mask], 0.37, atol=1e-7)
        assert np.all(out[mask] == 0.0)

    def test_checkerboard_matches_brute_force(self):
        img = checkerboard()
        out = warp_image(img, FixationPoint(8, 8), WarpParams(1.0, 4.0, 4.0))
        ref = brute_force_warp(img.astype(np.float64), (8, 8), 1.0, 4.0, 4.0)
        assert np.max(np.abs(out - ref)) < 1e-6

    def test_fractional_fixation_matches_brute_force(self):
        img = np.random.default_rng(2).random((21, 17, 1)).astype(np.float32)
        p = WarpParams(1.2, 3.0, 1.5)
        out = warp_image(img, FixationPoint(7.3, 11.6), p)
        ref = brute_force_warp(img.astype(np.float64), (7.3, 11.6), 1.2, 3.0, 1.5)
        assert np.max(np.abs(out - ref)) < 1e-6

    @pytest.mark.parametrize("n", [15, 33, 65])
    def test_rotation_commutes(self, n):
        img = np.random.default_rng(n).random((n, n, 3)).astype(np.float32)
        fix = FixationPoint(n // 2, n // 2)
        for p in (DEFAULT, WarpParams(1.0, 4.0, 4.0), WarpParams(1.5, 3.0, -1.0)):
            a = np.rot90(warp_image(img, fix, p))
            b = warp_image(np.ascontiguousarray(np.rot90(img)), fix, p)
            assert np.array_equal(a, b)

    def test_fill_and_clamp(self):
        img = np.full((16, 16, 3), 0.5, np.float32)
        fix = FixationPoint(8, 8)
        p = WarpParams(1.0, 2.0, 2.0)
        assert build_sampling_grid(16, 16, fix, p, 16, 16).fill_mask[0, 0]
        filled = warp_image(img, fix, p, fill=0.25)
        assert filled[0, 0, 0] == 0.25
        assert filled[8, 8, 0] == 0.5
        clamped = warp_image(img, fix, p, clamp=True)
        assert np.allclose(clamped, 0.5)

    def test_batch_matches_single(self):
        imgs = np.random.default_rng(3).random((3, 20, 20, 3)).astype(np.float32)
        fix = FixationPoint(10, 9)
        batch = warp_image(imgs, fix, DEFAULT)
        for i in range(3):
            assert np.array_equal(batch[i], warp_image(imgs[i], fix, DEFAULT))

    def test_output_range(self):
        img = np.random.default_rng(4).random((32, 32, 3)).astype(np.float32)
        out = warp_image(img, FixationPoint(5, 20), WarpParams(0.7, 6.0, 2.0))
        assert out.shape == img.shape
        assert out.min() >= 0 and out.max() <= 1
