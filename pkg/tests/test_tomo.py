"""
Acquisition simulation: geometry, projector, photon noise and SINF files.
"""

import numpy as np
import pytest

from app.core.errors import DataError, FluxOverflowError, FormatError, ShapeMismatchError, StageError
from app.core.parallel import set_workers
from app.imaging.image import Image
from app.phantoms import disk_phantom
from app.tomo.exposure import (
    ExposureModel,
    apply_exposure,
    attenuation_from_counts,
    counts_to_attenuation,
    ideal_attenuation,
    mean_counts,
    sample_poisson,
)
from app.tomo.geometry import Geometry
from app.tomo.projector import backproject, forward_project, get_projector
from app.tomo.sinogram import Sinogram, Stage, decode_sinf, encode_sinf, read_sinf, write_sinf


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

class TestGeometry:

    def test_for_image_covers_diagonal(self):
        geo = Geometry.for_image(128)
        assert geo.n_detectors % 2 == 0
        assert geo.n_detectors * geo.detector_spacing >= 128 * np.sqrt(2)

    def test_rejects_short_detector(self):
        with pytest.raises(ValueError):
            Geometry(n_views=10, n_detectors=20, image_size=32)

    def test_angles_span_half_turn(self):
        geo = Geometry.for_image(16, n_views=4)
        np.testing.assert_allclose(geo.angles, [0, np.pi / 4, np.pi / 2, 3 * np.pi / 4])


# ---------------------------------------------------------------------------
# Projector
# ---------------------------------------------------------------------------

class TestProjector:

    def test_central_chord_of_disk(self):
        geo = Geometry.for_image(128, n_views=36)
        radius, value = 30.0, 0.7
        sino = forward_project(disk_phantom(128, radius, value), geo)
        centre = sino.data[:, geo.n_detectors // 2 - 1: geo.n_detectors // 2 + 1].mean(axis=1)
        np.testing.assert_allclose(centre, 2 * radius * value, rtol=0.01)

    def test_linear(self, small_geometry, rng):
        a = Image(rng.random((32, 32)))
        b = Image(rng.random((32, 32)))
        both = Image(2.0 * a.data + 3.0 * b.data)
        pa = forward_project(a, small_geometry).data
        pb = forward_project(b, small_geometry).data
        np.testing.assert_allclose(forward_project(both, small_geometry).data, 2 * pa + 3 * pb,
                                   rtol=1e-5, atol=1e-5)

    def test_adjoint_identity(self, small_geometry, rng):
        proj = get_projector(small_geometry)
        x = rng.random((32, 32))
        y = rng.random(small_geometry.shape)
        lhs = float(np.vdot(proj.forward(x), y))
        rhs = float(np.vdot(x, proj.adjoint(y)))
        assert lhs == pytest.approx(rhs, rel=1e-4)

    def test_pixel_size_scales_integrals(self, rng):
        img = Image(rng.random((32, 32)))
        unit = forward_project(img, Geometry.for_image(32, n_views=8))
        scaled = forward_project(img, Geometry.for_image(32, n_views=8, pixel_size=0.25))
        np.testing.assert_allclose(scaled.data, 0.25 * unit.data, rtol=1e-6)

    def test_result_independent_of_workers(self, small_geometry, rng):
        img = Image(rng.random((32, 32)))
        set_workers(1)
        one = forward_project(img, small_geometry).data
        back_one = backproject(forward_project(img, small_geometry)).data
        set_workers(4)
        four = forward_project(img, small_geometry).data
        back_four = backproject(forward_project(img, small_geometry)).data
        assert one.tobytes() == four.tobytes()
        assert back_one.tobytes() == back_four.tobytes()

    def test_size_mismatch(self, small_geometry):
        with pytest.raises(ShapeMismatchError):
            forward_project(Image(np.zeros((16, 16))), small_geometry)

    def test_line_integrals_non_negative(self, small_geometry, rng):
        sino = forward_project(Image(rng.random((32, 32))), small_geometry)
        assert sino.stage == Stage.LINE_INTEGRAL
        assert sino.data.min() >= 0.0

    def test_every_view_carries_the_same_mass(self):
        geo = Geometry.for_image(64, n_views=90, pixel_size=0.5)
        yy, xx = np.mgrid[:64, :64] - 31.5
        img = Image(np.exp(-(xx ** 2 + yy ** 2) / (2 * 8.0 ** 2)))
        view_sums = forward_project(img, geo).data.sum(axis=1)
        np.testing.assert_allclose(view_sums, img.data.sum() * geo.pixel_size, rtol=0.01)


# ---------------------------------------------------------------------------
# Sinogram
# ---------------------------------------------------------------------------

class TestSinogram:

    def test_rejects_negative_integrals(self, small_geometry):
        data = np.zeros(small_geometry.shape)
        data[0, 0] = -1.0
        with pytest.raises(DataError):
            Sinogram(small_geometry, Stage.LINE_INTEGRAL, data)

    def test_rejects_fractional_counts(self, small_geometry):
        with pytest.raises(DataError):
            Sinogram(small_geometry, Stage.PHOTON_COUNTS, np.full(small_geometry.shape, 0.5))

    def test_shape_must_match_geometry(self, small_geometry):
        with pytest.raises(ShapeMismatchError):
            Sinogram(small_geometry, Stage.ATTENUATION, np.zeros((3, 3)))

    def test_sinf_round_trip(self, tmp_path, small_geometry, rng):
        sino = Sinogram(small_geometry, Stage.ATTENUATION, rng.random(small_geometry.shape).astype(np.float32))
        path = write_sinf(tmp_path / "s.sinf", sino)
        back = read_sinf(path)
        assert back.geometry == small_geometry
        assert back.stage == Stage.ATTENUATION
        assert back.data.tobytes() == sino.data.tobytes()
        assert encode_sinf(back) == path.read_bytes()

    def test_sinf_bad_stage_tag(self, small_geometry):
        raw = bytearray(encode_sinf(Sinogram(small_geometry, Stage.ATTENUATION, np.zeros(small_geometry.shape))))
        raw[6] = 9
        with pytest.raises(FormatError):
            decode_sinf(bytes(raw))


# ---------------------------------------------------------------------------
# Photon noise
# ---------------------------------------------------------------------------

class TestPoissonSampler:

    @pytest.mark.parametrize("lam", [0.5, 5.0, 500.0, 5.0e4])
    def test_mean_within_three_sigma(self, lam):
        rng = np.random.default_rng(21)
        draws = sample_poisson(np.full(10_000, lam), rng)
        sigma = np.sqrt(lam / draws.size)
        assert abs(draws.mean() - lam) < 3 * sigma

    def test_counts_are_non_negative_integers(self):
        draws = sample_poisson(np.array([0.0, 0.1, 2.0, 40.0, 1.0e5]), np.random.default_rng(0))
        assert np.all(draws >= 0)
        np.testing.assert_array_equal(draws, np.floor(draws))

    def test_zero_mean_gives_zero(self):
        draws = sample_poisson(np.zeros(100), np.random.default_rng(0))
        assert not draws.any()


class TestExposure:

    def test_flux_scales_with_exposure(self):
        low = ExposureModel(exposure=0.5)
        high = ExposureModel(exposure=1.4)
        assert high.flux / low.flux == pytest.approx(2.8)
        assert high.flux == pytest.approx(high.i0_reference)

    def test_mean_count_ratio(self, small_geometry, rng):
        sino = forward_project(Image(rng.random((32, 32))), small_geometry)
        ratio = mean_counts(sino, ExposureModel(exposure=1.4)) / mean_counts(sino, ExposureModel(exposure=0.5))
        np.testing.assert_allclose(ratio, 2.8, rtol=1e-12)

    def test_flat_field_log_variance_ratio(self, small_geometry):
        flat = Sinogram(small_geometry, Stage.LINE_INTEGRAL, np.zeros(small_geometry.shape))
        variances = {}
        for exposure in (0.5, 1.4):
            model = ExposureModel(exposure=exposure, seed=17)
            variances[exposure] = counts_to_attenuation(apply_exposure(flat, model), model).data.var()
        assert variances[0.5] / variances[1.4] == pytest.approx(2.8, rel=0.2)

    def test_zero_integral_mean_is_flux(self, small_geometry):
        sino = Sinogram(small_geometry, Stage.LINE_INTEGRAL, np.zeros(small_geometry.shape))
        model = ExposureModel(i0_reference=1000.0)
        counts = apply_exposure(sino, model)
        sigma = np.sqrt(model.flux / counts.data.size)
        assert abs(counts.data.mean() - model.flux) < 3 * sigma

    def test_seeded_and_worker_independent(self, small_geometry, rng):
        sino = forward_project(Image(rng.random((32, 32))), small_geometry)
        model = ExposureModel(exposure=0.5, seed=99)
        set_workers(1)
        a = apply_exposure(sino, model).data
        set_workers(3)
        b = apply_exposure(sino, model).data
        assert a.tobytes() == b.tobytes()
        c = apply_exposure(sino, model.with_seed(100)).data
        assert not np.array_equal(a, c)

    def test_flux_overflow(self, small_geometry):
        sino = Sinogram(small_geometry, Stage.LINE_INTEGRAL, np.zeros(small_geometry.shape))
        with pytest.raises(FluxOverflowError):
            apply_exposure(sino, ExposureModel(i0_reference=1.0e8))

    def test_stage_checked(self, small_geometry):
        sino = Sinogram(small_geometry, Stage.ATTENUATION, np.zeros(small_geometry.shape))
        with pytest.raises(StageError):
            apply_exposure(sino, ExposureModel())
        with pytest.raises(StageError):
            counts_to_attenuation(sino, ExposureModel())

    def test_noiseless_counts_invert(self, small_geometry, rng):
        sino = forward_project(Image(0.05 * rng.random((32, 32))), small_geometry)
        model = ExposureModel()
        att = attenuation_from_counts(mean_counts(sino, model), model.flux)
        np.testing.assert_allclose(att, sino.data, rtol=1e-6, atol=1e-9)

    def test_starved_bins_clamp_to_flux_of_one(self):
        att = attenuation_from_counts(np.array([0.0, 1.0, 2e4]), 1.0e4)
        assert att[0] == att[1] == pytest.approx(np.log(1.0e4))
        assert att[2] == 0.0

    def test_ideal_attenuation_passes_integrals(self, small_geometry, rng):
        sino = forward_project(Image(rng.random((32, 32))), small_geometry)
        att = ideal_attenuation(sino)
        assert att.stage == Stage.ATTENUATION
        np.testing.assert_array_equal(att.data, sino.data)
