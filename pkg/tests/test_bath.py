"""Discretization checks against closed-form and quadrature oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinboson.bath import (DiscretizationKind, DiscretizationScheme,
                            SpectralParams, discretize, discretize_linear,
                            discretize_log, initial_displacements,
                            read_bath_csv, spectral_density, write_bath_csv)
from spinboson.errors import InvalidParameterError, QuadratureError

# Closed-form antiderivatives for s=1, alpha=0.5 (J = w e^-w):
# int J dw = -(w+1)e^-w, int J w dw = -(w^2+2w+2)e^-w.
INT_J_0_4 = 1.0 - 5.0 * math.exp(-4.0)
LOG_BIN0_WEIGHT = 3.0 * math.exp(-2.0) - 5.0 * math.exp(-4.0)
LOG_BIN0_OMEGA = (10.0 * math.exp(-2.0) - 26.0 * math.exp(-4.0)) \
    / LOG_BIN0_WEIGHT

OHMIC = SpectralParams(s=1.0, alpha=0.5, omega_c=1.0)
SUBOHMIC = SpectralParams(s=0.25, alpha=0.03, omega_c=1.0)


def total_j_integral(params, omega_max, n_quad=200_001):
    """Trapezoid quadrature oracle for the J integral on [0, omega_max]."""
    grid = np.linspace(0.0, omega_max, n_quad)
    return np.trapezoid(spectral_density(params, grid), grid)


class TestSpectralDensity:
    def test_power_exponential_form(self):
        omega = np.array([0.5, 1.0, 2.0])
        expected = 2 * 0.03 * omega ** 0.25 * np.exp(-omega)
        assert np.allclose(spectral_density(SUBOHMIC, omega), expected,
                           rtol=1e-14)

    def test_parameter_validation(self):
        with pytest.raises(InvalidParameterError):
            SpectralParams(s=0.0, alpha=0.1)
        with pytest.raises(InvalidParameterError):
            SpectralParams(s=0.25, alpha=-0.1)
        with pytest.raises(InvalidParameterError):
            SpectralParams(s=0.25, alpha=0.1, omega_c=0.0)


class TestLinearDiscretization:
    def test_four_mode_grid(self):
        bath = discretize_linear(SUBOHMIC, 4, 4.0)
        assert np.allclose(bath.omegas, [1.0, 2.0, 3.0, 4.0])
        # lambda_1^2 = J(1) * dw = 0.06/e
        assert bath.couplings[0] ** 2 == pytest.approx(
            0.02207276647028654, rel=1e-12)

    def test_single_mode_recurrence(self):
        bath = discretize_linear(SUBOHMIC, 1, 4.0)
        assert bath.omegas.tolist() == [4.0]
        assert bath.recurrence_time == pytest.approx(2 * math.pi / 4.0)

    def test_weight_converges_to_integral(self):
        bath = discretize_linear(OHMIC, 4000, 4.0)
        assert bath.coupling_weight() == pytest.approx(INT_J_0_4, abs=1e-3)

    def test_weight_error_strictly_decreasing(self):
        errors = [abs(discretize_linear(OHMIC, n, 4.0).coupling_weight()
                      - INT_J_0_4) for n in (50, 200, 800)]
        assert errors[0] > errors[1] > errors[2]


class TestLogDiscretization:
    def test_top_bin_closed_form(self):
        # bin l=0 of Lambda=2 spans [2, 4]
        bath = discretize_log(OHMIC, 2, 4.0, 2.0)
        assert bath.couplings[-1] ** 2 == pytest.approx(LOG_BIN0_WEIGHT,
                                                        rel=1e-10)
        assert bath.omegas[-1] == pytest.approx(LOG_BIN0_OMEGA, rel=1e-10)

    def test_paper_scale_omega_min(self):
        scheme = DiscretizationScheme(kind=DiscretizationKind.LOGARITHMIC,
                                      n_modes=180, omega_max=4.0,
                                      lambda_base=1.1)
        assert scheme.omega_min == pytest.approx(1.417e-7, rel=1e-3)

    def test_weight_error_strictly_decreasing(self):
        # bins are integrated exactly, so the only weight deficit is the
        # untouched tail below omega_min, which shrinks as n_modes grows
        target = total_j_integral(SUBOHMIC, 4.0)
        errors = [abs(discretize_log(SUBOHMIC, n, 4.0, 1.05).coupling_weight()
                      - target) for n in (50, 200, 800)]
        assert errors[0] > errors[1] > errors[2]

    def test_quadrature_against_trapezoid_oracle(self):
        bath = discretize_log(SUBOHMIC, 12, 4.0, 1.5)
        edges = 4.0 * 1.5 ** -np.arange(13.0)
        for k in range(12):
            lo, hi = edges[k + 1], edges[k]
            grid = np.linspace(lo, hi, 10_001)
            j_vals = spectral_density(SUBOHMIC, grid)
            weight = np.trapezoid(j_vals, grid)
            first = np.trapezoid(j_vals * grid, grid)
            # modes are sorted ascending; bin k counts from the top
            idx = 12 - 1 - k
            assert bath.couplings[idx] ** 2 == pytest.approx(weight,
                                                             rel=1e-6)
            assert bath.omegas[idx] == pytest.approx(first / weight, rel=1e-6)

    @given(s=st.floats(0.1, 1.0), lam=st.floats(1.05, 3.0),
           n_modes=st.integers(2, 30))
    @settings(max_examples=25, deadline=None)
    def test_modes_interior_to_bins(self, s, lam, n_modes):
        params = SpectralParams(s=s, alpha=0.2, omega_c=1.0)
        bath = discretize_log(params, n_modes, 4.0, lam)
        edges = 4.0 * lam ** -np.arange(n_modes + 1.0)
        lows, highs = edges[::-1][:-1], edges[::-1][1:]
        assert np.all(bath.omegas > lows) and np.all(bath.omegas < highs)

    def test_zero_coupling_rejected(self):
        with pytest.raises(QuadratureError):
            discretize_log(SpectralParams(s=0.25, alpha=0.0), 4, 4.0, 1.5)


class TestDiscretizeDispatch:
    def test_scheme_routing(self):
        lin = discretize(SUBOHMIC, DiscretizationScheme(
            kind=DiscretizationKind.LINEAR, n_modes=8, omega_max=4.0))
        log = discretize(SUBOHMIC, DiscretizationScheme(
            kind=DiscretizationKind.LOGARITHMIC, n_modes=8, omega_max=4.0,
            lambda_base=1.5))
        assert np.allclose(np.diff(lin.omegas), 0.5)
        assert lin.scheme.kind is DiscretizationKind.LINEAR
        assert log.scheme.kind is DiscretizationKind.LOGARITHMIC
        assert np.all(np.diff(log.omegas) > 0)

    def test_lambda_base_validation(self):
        with pytest.raises(InvalidParameterError, match="lambda_base"):
            DiscretizationScheme(kind=DiscretizationKind.LOGARITHMIC,
                                 n_modes=8, omega_max=4.0, lambda_base=0.9)


class TestInitialDisplacements:
    def test_factorized_is_zero(self):
        bath = discretize_linear(SUBOHMIC, 6, 4.0)
        assert np.all(initial_displacements(bath, 0.0) == 0.0)

    def test_polarized_single_mode(self):
        from conftest import tiny_bath
        bath = tiny_bath([1.0], [0.2])
        assert initial_displacements(bath, 1.0) == pytest.approx([-0.1])

    def test_half_polarized(self):
        from conftest import tiny_bath
        bath = tiny_bath([0.5], [0.2])
        assert initial_displacements(bath, 0.5) == pytest.approx([-0.1])

    def test_mu_range_enforced(self):
        bath = discretize_linear(SUBOHMIC, 4, 4.0)
        for mu in (-0.1, 1.1):
            with pytest.raises(InvalidParameterError):
                initial_displacements(bath, mu)


class TestBathCsv:
    def test_round_trip_exact(self, tmp_path):
        bath = discretize_log(SUBOHMIC, 30, 4.0, 1.3)
        path = tmp_path / "bath.csv"
        write_bath_csv(bath, path)
        back = read_bath_csv(path)
        assert np.array_equal(back.omegas, bath.omegas)
        assert np.array_equal(back.couplings, bath.couplings)
        assert path.read_text().splitlines()[0] == "l,omega,lambda"
