import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from atslab.exceptions import DomainError, ValidationError
from atslab.model import CurveSpec, ModelParams, TenorParams, ats_log_chf
from atslab.subordination import (CoefficientPath, PowerCurve, TabulatedCurve, TssSpec, independence_gap,
                                  representability_verdict, tss_exponent_by_integral, tss_gamma_drift,
                                  tss_levy_density, tss_log_laplace, validate_tss)

GRID = np.geomspace(1e-6, 2.0, 25)


class TestValidate:
    def test_constant_curves_pass(self):
        assert validate_tss(TssSpec.constant(0.5, 0.2, 1.0), GRID) == []

    def test_decreasing_variance_of_time(self):
        spec = TssSpec(0.5, PowerCurve(0.2), PowerCurve(1.0, -1.0))
        conds = {v.condition for v in validate_tss(spec, GRID)}
        assert 3 in conds

    def test_condition_one(self):
        spec = TssSpec(0.0, PowerCurve(100.0, -0.5), PowerCurve(1.0))
        assert 1 in {v.condition for v in validate_tss(spec, GRID)}

    def test_condition_two_monotonicity(self):
        # t sigma^(2a) / k^(1-a) with k growing faster than t^2 decreases
        spec = TssSpec(0.5, PowerCurve(0.2), PowerCurve(1.0, 3.0))
        msgs = [v for v in validate_tss(spec, GRID) if v.condition == 2]
        assert msgs

    def test_calibrated_constant_eta_curves(self):
        # tabulated curves through a constant-eta parameter set
        p = CurveSpec(sigma_bar=0.2, k_bar=1.0, beta_k=1.0, delta=0.0).model_params([0.02, 0.1, 0.5, 1, 2], 0.5)
        assert validate_tss(TssSpec.from_params(p), GRID) == []

    def test_bad_grid(self):
        with pytest.raises(ValidationError):
            validate_tss(TssSpec.constant(0.5, 0.2, 1.0), [1.0, 0.5])


class TestDensity:
    def test_vg_value(self):
        assert tss_levy_density(1.0, 1.0, TssSpec.constant(0.0, 1.0, 1.0)) == pytest.approx(math.exp(-1), abs=1e-15)

    def test_linear_in_t(self):
        spec = TssSpec.constant(0.5, 0.3, 0.7)
        x = np.geomspace(1e-4, 10, 9)
        np.testing.assert_allclose(tss_levy_density(x, 2.0, spec), 2 * tss_levy_density(x, 1.0, spec), rtol=1e-14)

    def test_rejects_non_positive(self):
        with pytest.raises(DomainError):
            tss_levy_density(0.0, 1.0, TssSpec.constant(0.5, 0.2, 1.0))

    @pytest.mark.parametrize("alpha", [0.0, 0.5])
    def test_monotone_in_t(self, alpha):
        spec = TssSpec.from_curves(CurveSpec(sigma_bar=0.2, k_bar=1.0, beta_k=1.0), alpha)
        x = np.geomspace(1e-5, 1.0, 11)
        ts = np.geomspace(0.01, 2, 12)
        vals = np.array([tss_levy_density(x, t, spec) for t in ts])
        assert np.all(np.diff(vals, axis=0) >= 0)

    def test_total_mean(self):
        # int x V_t(x) dx over (0, inf) is t sigma^2
        spec = TssSpec.constant(0.5, 0.4, 0.3)
        val, _ = integrate.quad(lambda x: x * tss_levy_density(x, 1.5, spec), 0, np.inf, limit=200)
        assert val == pytest.approx(1.5 * 0.16, rel=1e-8)


class TestGammaDrift:
    def test_closed_form(self):
        assert tss_gamma_drift(1.0, TssSpec.constant(0.0, 1.0, 1.0)) == pytest.approx(1 - math.exp(-1), abs=1e-12)

    @pytest.mark.parametrize("alpha", [0.0, 0.5, 0.8])
    def test_bound_and_vanishing(self, alpha):
        spec = TssSpec.from_curves(CurveSpec(sigma_bar=0.3, k_bar=0.5, beta_k=1.0), alpha)
        ts = np.geomspace(1e-4, 3, 15)
        g = np.array([tss_gamma_drift(t, spec) for t in ts])
        assert np.all(g >= 0)
        assert np.all(g <= ts * 0.09 * (1 + 1e-12))
        assert g[0] < 1e-4


class TestLaplace:
    def test_zero(self):
        assert tss_log_laplace(0.0, 1.0, TssSpec.constant(0.5, 0.2, 1.0)) == 0

    def test_vg_value(self):
        assert tss_log_laplace(1.0, 1.0, TssSpec.constant(0.0, 1.0, 1.0)) == pytest.approx(-math.log(2), abs=1e-15)

    @pytest.mark.parametrize("alpha", [0.0, 0.5])
    def test_mean_from_derivative(self, alpha):
        spec = TssSpec.constant(alpha, 0.3, 0.8)
        h = 1e-6
        d = (tss_log_laplace(h, 2.0, spec) - tss_log_laplace(-h, 2.0, spec)).real / (2 * h)
        assert -d == pytest.approx(2.0 * 0.09, rel=1e-8)

    def test_branch(self):
        with pytest.raises(DomainError):
            tss_log_laplace(-100.0, 1.0, TssSpec.constant(0.0, 1.0, 1.0))

    @given(u=st.floats(-30, 30), T=st.floats(0.01, 3), sigma=st.floats(0.05, 0.6), k=st.floats(0.01, 3),
           eta=st.floats(0.05, 4), alpha=st.sampled_from([0.0, 0.5]))
    @settings(max_examples=80)
    def test_marginal_identity(self, u, T, sigma, k, eta, alpha):
        tp = TenorParams(T, sigma, k, eta).with_drift(alpha)
        spec = TssSpec.constant(alpha, sigma, k)
        w = 1j * u * (0.5 + eta) + 0.5 * u * u
        lhs = ats_log_chf(u, tp, alpha)
        rhs = tss_log_laplace(w, T, spec) + 1j * u * tp.phi * T
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


class TestExponentByIntegral:
    def test_vg_value(self):
        got = tss_exponent_by_integral(1.0, 1.0, TssSpec.constant(0.0, 1.0, 1.0))
        assert abs(got - complex(-math.log(math.sqrt(2)), math.pi / 4)) < 1e-9

    def test_zero(self):
        assert tss_exponent_by_integral(0.0, 1.0, TssSpec.constant(0.5, 1.0, 1.0)) == 0

    @pytest.mark.parametrize("alpha", [0.0, 0.5])
    @pytest.mark.parametrize("t", [0.05, 0.25, 1.0, 2.0])
    def test_matches_closed_form(self, alpha, t):
        spec = TssSpec.from_curves(CurveSpec(sigma_bar=0.2, k_bar=1.0, beta_k=1.0), alpha)
        for u in (-5, -2, -1, -0.5, 0.5, 1, 2, 5):
            assert abs(tss_exponent_by_integral(u, t, spec) - tss_log_laplace(-1j * u, t, spec)) <= 1e-6


class TestRepresentability:
    def test_constant_eta(self):
        p = CurveSpec(eta_bar=0.5, delta=0.0).model_params([0.1, 0.5, 1.0], 0.5)
        v = representability_verdict(p)
        assert v.representable and v.a == 1.0 and v.b == pytest.approx(-1.0)

    def test_witness(self):
        p = ModelParams(0.5, (TenorParams(0.1, 0.2, 1, 1.0), TenorParams(1.0, 0.2, 1, 0.5)))
        v = representability_verdict(p)
        assert not v.representable and v.witness == (0.1, 1.0)

    @pytest.mark.parametrize("spread,expect", [(5e-7, True), (2e-6, False)])
    def test_tolerance_edge(self, spread, expect):
        p = ModelParams(0.5, (TenorParams(0.1, 0.2, 1, 1.0), TenorParams(1.0, 0.2, 1, 1.0 + spread)))
        assert representability_verdict(p, tol=1e-6).representable is expect

    def test_single_tenor(self):
        with pytest.raises(ValidationError):
            representability_verdict(ModelParams(0.5, (TenorParams(1.0, 0.2, 1, 1.0),)))


class TestIndependenceGap:
    SPEC = TssSpec.constant(0.5, 0.4, 1.0)

    def test_constant_coefficients(self):
        path = CoefficientPath(PowerCurve(1.3), PowerCurve(-0.8))
        for u1 in np.linspace(-3, 3, 5):
            for u2 in np.linspace(-3, 3, 5):
                assert independence_gap(0.5, 1.0, u1, u2, path, self.SPEC) <= 1e-12

    def test_doubling_variance(self):
        # a_s = 1, a_t = 2, b = 0
        path = CoefficientPath(PowerCurve(2.0, 1.0), PowerCurve(0.0))
        assert independence_gap(0.5, 1.0, 1.0, 1.0, path, self.SPEC) > 1e-6

    def test_zero_first_argument(self):
        path = CoefficientPath(PowerCurve(1.0, 1.0), PowerCurve(-1.0, 0.5))
        assert independence_gap(0.5, 1.0, 0.0, 2.0, path, self.SPEC) <= 1e-15

    def test_order(self):
        with pytest.raises(ValidationError):
            independence_gap(1.0, 0.5, 1, 1, CoefficientPath(PowerCurve(1.0), PowerCurve(0.0)), self.SPEC)


def test_tabulated_curve_interpolates_power_laws():
    c = TabulatedCurve([0.1, 1.0, 2.0], [0.01, 1.0, 4.0])
    assert c(0.5) == pytest.approx(0.25, rel=1e-12)
    assert c(0.01) == pytest.approx(1e-4, rel=1e-12)
    assert c(4.0) == pytest.approx(16.0, rel=1e-12)
