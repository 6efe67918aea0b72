import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swinfir.data import ImagePair
from swinfir.ensemble import TRANSFORMS, apply_transform
from swinfir.errors import ShapeError
from swinfir.metrics import (
    MetricReport, bicubic_resize, bicubic_upscale, gaussian_kernel, psnr, psnr_ssim_y, rgb_to_y, ssim,
)
from swinfir.trainops import channel_shuffle


def reference_ssim(a, b, win=11, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0):
    """Window-by-window SSIM with explicit weighted moments; slow on purpose."""
    x = np.arange(win) - (win - 1) / 2
    g1 = np.exp(-x ** 2 / (2 * sigma ** 2))
    w = np.outer(g1, g1)
    w /= w.sum()
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    vals = []
    for i in range(a.shape[0] - win + 1):
        for j in range(a.shape[1] - win + 1):
            pa, pb = a[i:i + win, j:j + win], b[i:i + win, j:j + win]
            ma, mb = (w * pa).sum(), (w * pb).sum()
            va = (w * (pa - ma) ** 2).sum()
            vb = (w * (pb - mb) ** 2).sum()
            cov = (w * (pa - ma) * (pb - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


class TestY:
    def test_black_white_gray(self):
        assert rgb_to_y(np.zeros((3, 2, 2)))[0, 0, 0] == pytest.approx(16 / 255, abs=1e-15)
        assert rgb_to_y(np.ones((3, 2, 2)))[0, 1, 1] == pytest.approx(235 / 255, abs=1e-6)
        for g in (0.1, 0.5, 0.83):
            assert rgb_to_y(np.full((3, 1, 1), g))[0, 0, 0] == pytest.approx((219 * g + 16) / 255, abs=1e-6)

    def test_shape(self):
        assert rgb_to_y(np.zeros((3, 4, 5))).shape == (1, 4, 5)
        with pytest.raises(ShapeError):
            rgb_to_y(np.zeros((4, 4, 4)))

    def test_channel_shuffle_changes_luma(self):
        rng = np.random.default_rng(0)
        p = ImagePair("a", rng.uniform(size=(3, 4, 4)), rng.uniform(size=(3, 8, 8)), 2)
        assert not np.allclose(rgb_to_y(channel_shuffle(p, (2, 0, 1)).hr), rgb_to_y(p.hr))


class TestPSNR:
    def test_identical_is_infinite(self):
        a = np.random.default_rng(0).uniform(size=(1, 8, 8))
        assert psnr(a, a) == math.inf

    def test_mse_100_on_8bit_scale(self):
        a = np.zeros((20, 20))
        b = np.full((20, 20), 10.0)
        assert psnr(a, b, max_val=255.0) == pytest.approx(28.131, abs=1e-3)
        assert psnr(a / 255, b / 255) == pytest.approx(10 * math.log10(255 ** 2 / 100), abs=1e-10)

    def test_halving_mse_adds_3db(self):
        a = np.zeros((4, 4))
        assert psnr(a, np.full((4, 4), 0.1 / math.sqrt(2))) - psnr(a, np.full((4, 4), 0.1)) == pytest.approx(
            10 * math.log10(2), abs=1e-12)

    def test_border_crop(self):
        a = np.zeros((1, 10, 10))
        b = a.copy()
        b[..., 0, :] = 1.0
        assert psnr(a, b, border_crop=1) == math.inf

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 1000), st.integers(6, 20), st.integers(6, 20))
    def test_invariant_under_dihedral_transforms(self, seed, h, w):
        rng = np.random.default_rng(seed)
        a, b = rng.uniform(size=(1, h, w)), rng.uniform(size=(1, h, w))
        base = psnr(a, b, 2)
        for k, f in TRANSFORMS:
            assert psnr(apply_transform(a, k, f), apply_transform(b, k, f), 2) == base

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            psnr(np.zeros((4, 4)), np.zeros((4, 5)))


class TestSSIM:
    def test_identical_is_one(self):
        a = np.random.default_rng(0).uniform(size=(20, 24))
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_anticorrelated_binary_is_negative(self):
        a = (np.random.default_rng(1).uniform(size=(16, 16)) > 0.5).astype(float)
        assert ssim(a, 1 - a) < 0

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_reference_16x16(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.uniform(size=(16, 16))
        b = np.clip(a + rng.normal(0, 0.1, size=a.shape), 0, 1)
        assert abs(ssim(a, b) - reference_ssim(a, b)) < 1e-9

    def test_too_small(self):
        with pytest.raises(ShapeError):
            ssim(np.zeros((10, 12)), np.zeros((10, 12)))

    def test_kernel_is_normalised(self):
        assert gaussian_kernel().sum() == pytest.approx(1.0, abs=1e-15)

    def test_y_pair_of_hr_with_itself(self):
        hr = np.random.default_rng(2).uniform(size=(3, 30, 30))
        p, s = psnr_ssim_y(hr, hr, 2)
        assert p == math.inf and s == pytest.approx(1.0)


class TestBicubic:
    def test_same_size_is_identity(self):
        a = np.random.default_rng(0).uniform(size=(3, 9, 11))
        np.testing.assert_allclose(bicubic_resize(a, 9, 11), a, atol=1e-9)

    @pytest.mark.parametrize("shape", [(7, 9), (26, 34), (5, 40)])
    def test_constant_stays_constant(self, shape):
        # weights sum to one, so only final-rounding error remains
        out = bicubic_resize(np.full((3, 13, 17), 0.37), *shape)
        np.testing.assert_allclose(out, 0.37, rtol=0, atol=4 * np.finfo(float).eps)

    @pytest.mark.parametrize("factor", [2, 3, 4])
    def test_linear_ramp_is_reproduced(self, factor):
        n = 12 * factor
        ramp = np.tile(np.arange(n, dtype=float) / n, (n, 1))
        out = bicubic_resize(ramp, 12, 12)
        centres = (np.arange(12) + 0.5) * factor - 0.5  # output pixel centres in input coordinates
        inner = slice(3, -3)
        np.testing.assert_allclose(out[:, inner], np.tile(centres / n, (12, 1))[:, inner], atol=1e-6)

    def test_zero_extent(self):
        with pytest.raises(ShapeError):
            bicubic_resize(np.zeros((4, 4)), 0, 4)

    def test_upscale_shape_and_range(self):
        out = bicubic_upscale(np.random.default_rng(1).uniform(size=(2, 3, 5, 7)), 3)
        assert out.shape == (2, 3, 15, 21) and out.min() >= 0 and out.max() <= 1

    def test_upscale_is_dihedrally_equivariant(self):
        lr = np.random.default_rng(2).uniform(size=(1, 3, 6, 6))
        up = bicubic_upscale(lr, 2)
        for k, f in TRANSFORMS:
            np.testing.assert_allclose(bicubic_upscale(apply_transform(lr, k, f), 2), apply_transform(up, k, f),
                                       atol=1e-12)


class TestReport:
    def test_means_text_and_csv(self):
        r = MetricReport(border=2, forward_passes=3, label="x2")
        r.add("b", 30.0, 0.9)
        r.add("a", 32.0, 0.8)
        assert r.mean_psnr == pytest.approx(31.0) and r.mean_ssim == pytest.approx(0.85)
        text = r.to_text()
        assert text.index("\na ") < text.index("\nb ")
        assert "forward passes 3" in text and "border 2" in text
        assert r.to_csv().splitlines() == ["name,psnr_db,ssim", "a,32.0,0.8", "b,30.0,0.9"]

    def test_empty(self):
        assert math.isnan(MetricReport().mean_psnr)
