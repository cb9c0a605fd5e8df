import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arrayimaging._validation import ApertureConditionError
from arrayimaging.geometry import (
    ConfigParseError,
    ImagingConfig,
    TargetGrid,
    green_exact,
    green_paraxial,
    orthonormality_gram,
    paraxial_error_report,
    sample_antennas,
)


def test_reference_config_has_unit_aperture_ratio(reference_config):
    assert reference_config.rho == 1
    assert reference_config.grid_side == 80
    assert reference_config.grid_size == 6400


def test_aperture_condition_rejected():
    with pytest.raises(ApertureConditionError, match="aperture condition"):
        ImagingConfig(wavelength=0.03, aperture=30, range_z0=10000, mesh=13, halfsize=400)


def test_aperture_condition_tolerates_rounding():
    # 0.1 + 0.2 style noise in the mesh must not trip the check
    cfg = ImagingConfig(wavelength=0.03, aperture=30, range_z0=10000, mesh=10 * (1 + 1e-12), halfsize=400)
    assert cfg.rho == 1


def test_integer_rho_above_one():
    cfg = ImagingConfig(wavelength=0.03, aperture=60, range_z0=10000, mesh=10, halfsize=40)
    assert cfg.rho == 2


def test_far_field_warning():
    with pytest.warns(UserWarning, match="paraxial"):
        ImagingConfig(wavelength=0.03, aperture=30, range_z0=300, mesh=0.3, halfsize=3)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        ImagingConfig.default(6400)


def test_config_text_round_trip(reference_config):
    again = ImagingConfig.from_text(reference_config.to_text())
    assert again == reference_config


def test_config_parse_error_names_line():
    text = "lambda_m = 0.03\naperture_m = 30\nrange_m = oops\n"
    with pytest.raises(ConfigParseError, match="line 3"):
        ImagingConfig.from_text(text)
    with pytest.raises(ConfigParseError, match="line 1"):
        ImagingConfig.from_text("bogus = 1\n")


def test_grid_index_bijection(small_config):
    grid = TargetGrid(small_config)
    flat = np.arange(len(grid))
    k, l = grid.double_index(flat)
    assert np.array_equal(grid.flat_index(k, l), flat)
    # lexicographic order and coordinates
    assert np.allclose(grid.points[1, :2] - grid.points[0, :2], [0, small_config.mesh])
    assert np.allclose(grid.points[0], [-small_config.halfsize + small_config.mesh] * 2 + [small_config.range_z0])


class TestSampleAntennas:
    def test_single_antenna_inside(self, reference_config):
        arr = sample_antennas(reference_config, 1, 0)
        assert arr.n == 1
        assert np.all(np.abs(arr.positions) <= 15)

    def test_centered_domain(self, reference_config):
        pos = sample_antennas(reference_config, 500, 1).positions
        assert pos.min() >= -15 and pos.max() <= 15

    def test_offset_center(self):
        cfg = ImagingConfig.default(16, center_x=15.0, center_y=15.0)
        pos = sample_antennas(cfg, 200, 2).positions
        assert pos.min() >= 0 and pos.max() <= 30

    def test_deterministic(self, reference_config):
        a = sample_antennas(reference_config, 8, 42).positions
        b = sample_antennas(reference_config, 8, 42).positions
        assert a.tobytes() == b.tobytes()

    def test_zero_antennas_rejected(self, reference_config):
        with pytest.raises(ValueError):
            sample_antennas(reference_config, 0, 0)

    def test_seed_required(self, reference_config):
        with pytest.raises(TypeError):
            sample_antennas(reference_config, 3, None)


class TestGreenExact:
    lam = 0.03

    def test_full_period(self):
        g = green_exact([0, 0, self.lam], [0, 0, 0], self.lam)
        assert g == pytest.approx(1 / (4 * math.pi * self.lam), rel=1e-12)

    def test_half_period(self):
        g = green_exact([0, 0, self.lam / 2], [0, 0, 0], self.lam)
        assert g.real == pytest.approx(-1 / (4 * math.pi * self.lam / 2), rel=1e-12)
        assert abs(g.imag) < 1e-12 * abs(g.real)

    def test_modulus(self, rng):
        r, b = rng.normal(size=3) * 100, rng.normal(size=3)
        assert abs(green_exact(r, b, self.lam)) == pytest.approx(1 / (4 * math.pi * np.linalg.norm(r - b)))

    def test_singular(self):
        with pytest.raises(ZeroDivisionError):
            green_exact([1, 2, 3], [1, 2, 3], self.lam)


class TestGreenParaxial:
    def test_on_axis(self, reference_config):
        g = green_paraxial([3.0, -4.0, reference_config.range_z0], [3.0, -4.0, 0.0], reference_config)
        assert g == pytest.approx(reference_config.carrier_phase, abs=1e-15)

    @settings(max_examples=200, deadline=None)
    @given(
        st.tuples(st.floats(-500, 500), st.floats(-500, 500)),
        st.tuples(st.floats(-15, 15), st.floats(-15, 15)),
    )
    def test_unit_modulus(self, reference_config, r, b):
        assert abs(abs(green_paraxial(r, b, reference_config)) - 1) < 1e-14

    def test_approximates_normalized_exact(self, reference_config):
        # 4 pi z0 G ~ G_paraxial in the far field, up to the 1/|r-b| amplitude ratio
        r = np.array([120.0, -80.0, reference_config.range_z0])
        b = np.array([5.0, 7.0, 0.0])
        exact = 4 * math.pi * reference_config.range_z0 * green_exact(r, b, reference_config.wavelength)
        approx = green_paraxial(r, b, reference_config)
        assert abs(exact - approx) < 0.05


def test_orthonormality_quadrature(reference_config, rng):
    idx = rng.choice(reference_config.grid_size, 10, replace=False)
    gram = orthonormality_gram(reference_config, idx, nodes=256)
    assert np.max(np.abs(np.diag(gram) - 1)) < 1e-8
    assert np.max(np.abs(gram - np.eye(10))) < 1e-6


def test_orthonormality_for_rho_two_and_uncentered_domain():
    cfg = ImagingConfig(wavelength=0.03, aperture=60, range_z0=10000, mesh=10, halfsize=40, center_x=30, center_y=30)
    gram = orthonormality_gram(cfg, np.arange(cfg.grid_size), nodes=256)
    assert np.max(np.abs(gram - np.eye(cfg.grid_size))) < 1e-6


class TestParaxialError:
    def test_reference_config_report(self, reference_config):
        rep = paraxial_error_report(reference_config, 1000, 0)
        assert np.isfinite(rep.max_error) and rep.mean_error <= rep.max_error
        assert rep.pairs == 1000

    def test_decreases_with_range(self):
        near = ImagingConfig(wavelength=0.03, aperture=30, range_z0=10000, mesh=10, halfsize=200)
        far = ImagingConfig(wavelength=0.03, aperture=30, range_z0=20000, mesh=20, halfsize=200)
        e_near = paraxial_error_report(near, 2000, 3).max_error
        e_far = paraxial_error_report(far, 2000, 3).max_error
        assert e_far < e_near

    def test_zero_on_axis(self, reference_config):
        from arrayimaging.geometry import _paraxial_distance_error

        assert _paraxial_distance_error(np.array([0.0]), reference_config.range_z0)[0] == 0.0
