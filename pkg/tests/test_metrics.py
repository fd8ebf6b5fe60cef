"""
Quality metrics checked against straightforward per-pixel reference implementations.
"""

import logging
import math

import numpy as np
import pytest

from app.core.errors import InvalidRangeError, ShapeMismatchError
from app.imaging.image import Image
from app.metrics.quality import finite_mean, format_metric, mse, porosity, psnr
from app.metrics.ssim import (
    SsimParams,
    WindowKind,
    local_filter,
    local_filter_adjoint,
    mssim,
    ssim_and_gradient,
    ssim_map,
    window_kernel,
)
from app.neural.gradcheck import numerical_gradient, relative_error


# ---------------------------------------------------------------------------
# Reference implementations
# ---------------------------------------------------------------------------

def loop_mse(a: np.ndarray, b: np.ndarray) -> float:
    total = 0.0
    for r in range(a.shape[0]):
        for c in range(a.shape[1]):
            d = float(a[r, c]) - float(b[r, c])
            total += d * d
    return total / a.size


def loop_ssim(x: np.ndarray, y: np.ndarray, params: SsimParams) -> np.ndarray:
    w1 = window_kernel(params.window, params.size, params.sigma)
    w2 = np.outer(w1, w1)
    pad = params.size // 2
    xp = np.pad(x.astype(np.float64), pad, mode="symmetric")
    yp = np.pad(y.astype(np.float64), pad, mode="symmetric")
    out = np.zeros(x.shape)
    for r in range(x.shape[0]):
        for c in range(x.shape[1]):
            px = xp[r:r + params.size, c:c + params.size]
            py = yp[r:r + params.size, c:c + params.size]
            mx = np.sum(w2 * px)
            my = np.sum(w2 * py)
            vx = np.sum(w2 * px * px) - mx * mx
            vy = np.sum(w2 * py * py) - my * my
            cxy = np.sum(w2 * px * py) - mx * my
            out[r, c] = ((2 * mx * my + params.c1) * (2 * cxy + params.c2)) / (
                (mx * mx + my * my + params.c1) * (vx + vy + params.c2))
    return out


def random_pairs(count: int, shape=(16, 16), seed: int = 0):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        x = rng.random(shape)
        y = np.clip(x + 0.2 * rng.standard_normal(shape), 0, 1)
        yield Image(x), Image(y)


# ---------------------------------------------------------------------------
# MSE / PSNR / porosity
# ---------------------------------------------------------------------------

class TestPixelMetrics:

    def test_mse_matches_loop(self):
        for a, b in random_pairs(50, (9, 13), seed=1):
            assert mse(a, b) == pytest.approx(loop_mse(a.data, b.data), abs=1e-12)

    def test_psnr_of_constant_offset(self):
        a = Image(np.zeros((8, 8)))
        b = Image(np.full((8, 8), 0.1))
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)

    def test_psnr_identical_is_infinite(self):
        img = Image(np.ones((4, 4)))
        assert psnr(img, img) == math.inf
        assert format_metric(psnr(img, img)) == "inf"

    def test_psnr_bad_peak(self):
        img = Image(np.ones((4, 4)))
        with pytest.raises(InvalidRangeError):
            psnr(img, img, peak=0.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            mse(Image(np.zeros((4, 4))), Image(np.zeros((4, 5))))

    def test_porosity_counts_dark_pixels(self):
        data = np.ones((10, 10))
        data[:3] = 0.0
        data[3, :5] = 0.04
        assert porosity(Image(data)) == pytest.approx(0.35)

    def test_format_metric(self):
        assert format_metric(1.0 / 3.0) == "0.333333"
        assert format_metric(-math.inf) == "-inf"

    def test_finite_mean_logs_what_it_leaves_out(self, caplog):
        with caplog.at_level(logging.INFO, logger="app.metrics.quality"):
            assert finite_mean([20.0, math.inf, 30.0], "PSNR") == pytest.approx(25.0)
        assert "1 of 3 PSNR are not finite" in caplog.text

    def test_finite_mean_silent_when_all_finite(self, caplog):
        with caplog.at_level(logging.INFO, logger="app.metrics.quality"):
            assert finite_mean([1.0, 3.0]) == pytest.approx(2.0)
        assert caplog.text == ""

    def test_finite_mean_of_identical_images_is_infinite(self):
        assert finite_mean([math.inf, math.inf]) == math.inf


# ---------------------------------------------------------------------------
# SSIM
# ---------------------------------------------------------------------------

class TestSsimParams:

    def test_constants_follow_dynamic_range(self):
        params = SsimParams(dynamic_range=2.0)
        assert params.c1 == pytest.approx((0.01 * 2.0) ** 2)
        assert params.c2 == pytest.approx((0.03 * 2.0) ** 2)

    def test_even_window_rejected(self):
        with pytest.raises(ValueError):
            SsimParams(size=8)

    @pytest.mark.parametrize("kind", list(WindowKind))
    def test_window_sums_to_one(self, kind):
        assert window_kernel(kind, 11).sum() == pytest.approx(1.0)


class TestSsim:

    @pytest.mark.parametrize("params", [SsimParams(), SsimParams(window="uniform", size=7)])
    def test_map_matches_loop(self, params):
        for a, b in random_pairs(50, seed=2):
            np.testing.assert_allclose(ssim_map(a, b, params), loop_ssim(a.data, b.data, params), atol=1e-6)

    def test_mean_matches_loop(self):
        for a, b in random_pairs(10, seed=3):
            assert mssim(a, b) == pytest.approx(float(loop_ssim(a.data, b.data, SsimParams()).mean()), abs=1e-6)

    def test_self_similarity_is_one(self, rng):
        img = Image(rng.random((20, 24)))
        np.testing.assert_allclose(ssim_map(img, img), 1.0, atol=1e-12)
        assert mssim(img, img) == pytest.approx(1.0, abs=1e-12)

    def test_map_has_input_size(self, rng):
        a = Image(rng.random((13, 21)))
        assert ssim_map(a, a).shape == (13, 21)

    def test_noise_lowers_ssim(self, rng):
        clean = Image(rng.random((32, 32)))
        slight = Image(np.clip(clean.data + 0.02 * rng.standard_normal((32, 32)), 0, 1))
        heavy = Image(np.clip(clean.data + 0.2 * rng.standard_normal((32, 32)), 0, 1))
        assert mssim(slight, clean) > mssim(heavy, clean)

    def test_filter_adjoint(self, rng):
        params = SsimParams()
        x = rng.random((14, 18))
        g = rng.random((14, 18))
        assert np.vdot(local_filter(x, params), g) == pytest.approx(np.vdot(x, local_filter_adjoint(g, params)))

    def test_gradient_matches_finite_differences(self, rng):
        params = SsimParams(size=5, sigma=1.0)
        x = rng.random((10, 10))
        y = np.clip(x + 0.1 * rng.standard_normal(x.shape), 0, 1)
        _, grad = ssim_and_gradient(x, y, params)
        numeric = numerical_gradient(lambda: float(ssim_and_gradient(x, y, params)[0].sum()), x)
        assert relative_error(grad, numeric) < 1e-4
