import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate as sp_integrate

from conftest import families
from smoothdiv.bounds import (
    ConditionReport,
    chi2_divergence_probe,
    chi2_mean_integral,
    concentration_bound,
    condition_probe,
    lemma1_bound,
    lemma2_best_bound,
    lemma2_bound,
    lemma2_check,
    lemma3_check,
    lemma3_general_check,
    mgf_check,
    tv_lower_bound,
    tv_upper_bound,
    tv_variance_integral,
)
from smoothdiv.divergence import DivergenceEstimator
from smoothdiv.errors import ConfigError
from smoothdiv.integration import ImportanceRule, default_proposal, make_grid
from smoothdiv.measures import Gaussian, PointCloud, UniformBox, gaussian_density, sample


def gaussian_j(cov, sigma):
    """Closed form of J for Gaussian P: det(I + cov / sigma^2) - 1.

    From E phi^2 / rho integrated over R^d as a product of 1-d Gaussian
    integrals along the eigenvectors of cov.
    """
    lam = np.linalg.eigvalsh(np.atleast_2d(cov))
    return float(np.prod(1.0 + lam / sigma**2) - 1.0)


def combined(a, b):
    return math.hypot(a.error, b.error)


class TestVarianceIntegral:
    def test_point_mass(self, point_mass):
        est = tv_variance_integral(point_mass, 1.0)
        assert est.value == 0.0
        assert tv_upper_bound(point_mass, 1.0).value == 0.0 and tv_lower_bound(point_mass, 1.0).value == 0.0

    def test_grid_vs_importance_two_points(self):
        spec = PointCloud([[-1.3], [1.3]], [0.5, 0.5])
        a = tv_variance_integral(spec, 1.0, make_grid(spec, 1.0, 1e-8, 2000))
        b = tv_variance_integral(spec, 1.0, ImportanceRule(default_proposal(spec, 1.0), 10**6, 3))
        assert abs(a.value - b.value) < 3 * combined(a, b)

    def test_closed_form_integrand(self, g025):
        # For P = N(0, 0.25), sigma = 1: E phi^2 = (4 pi)^{-1/2} phi_{sqrt(0.75)}, rho = phi_{sqrt(1.25)}.
        def root_v(x):
            m2 = (4 * math.pi) ** -0.5 * np.exp(-x * x / 1.5) / math.sqrt(1.5 * math.pi)
            rho = np.exp(-x * x / 2.5) / math.sqrt(2.5 * math.pi)
            return math.sqrt(max(m2 - rho * rho, 0.0))

        lo, hi = make_grid(g025, 1.0).lo[0], make_grid(g025, 1.0).hi[0]
        dense, _ = sp_integrate.quad(root_v, lo, hi, epsabs=1e-13, epsrel=1e-13, limit=400)
        assert tv_variance_integral(g025, 1.0, make_grid(g025, 1.0, 1e-8, 4000)).value == pytest.approx(dense, abs=1e-8)

    def test_frozen_value(self, g025):
        assert tv_variance_integral(g025, 1.0).value == pytest.approx(0.406886, abs=1e-6)

    @pytest.mark.parametrize("name", ["gaussian", "mixture", "box", "cloud"])
    def test_sandwich(self, name):
        spec = families(2)[name]
        up, low = tv_upper_bound(spec, 0.8), tv_lower_bound(spec, 0.8)
        assert low.value <= up.value
        assert low.value / up.value == pytest.approx(math.sqrt(2 / math.pi), rel=1e-12)
        assert up.value == pytest.approx(0.5 * tv_variance_integral(spec, 0.8).value, rel=1e-15)

    def test_moment_bound_by_simulation(self, g025):
        est = DivergenceEstimator(g025, 1.0)
        stats = np.array([math.sqrt(2000) * est.estimate(sample(g025, 2000, 5_000_000 + r))[0].value for r in range(500)])
        sem = stats.std(ddof=1) / math.sqrt(stats.size)
        assert stats.mean() <= tv_upper_bound(g025, 1.0).value + 3 * sem


class TestLemma1:
    def test_point_mass_at_origin(self, point_mass):
        assert lemma1_bound(point_mass, 1.0) == pytest.approx(math.sqrt(8.0), rel=1e-14)

    @pytest.mark.parametrize("d", [1, 2])
    @pytest.mark.parametrize("name", ["gaussian", "mixture", "box", "cloud"])
    def test_dominates_integral(self, d, name):
        spec = families(d)[name]
        for sigma in (0.5, 1.0, 2.0):
            assert lemma1_bound(spec, sigma) >= tv_variance_integral(spec, sigma).value

    def test_standard_gaussian_2d(self):
        spec = Gaussian(np.zeros(2), np.eye(2))
        bound = lemma1_bound(spec, 1.0)
        # Tail of a chi with 2 dof: P(|X| > t) = exp(-t^2 / 2); t * exp(-t^2 / 4) integrates to 2.
        assert bound == pytest.approx(8.0 + 4.0 * 2.0, rel=1e-8)
        ref = tv_variance_integral(spec, 1.0, ImportanceRule(default_proposal(spec, 1.0), 10**6, 4))
        assert bound >= ref.value + 3 * ref.error

    def test_step_tail(self):
        # Points at radii 1 and 3 with weights 0.5: integral = 1 + sqrt(0.5) * 2 in d = 1.
        spec = PointCloud([[1.0], [-3.0]])
        assert lemma1_bound(spec, 1.0) == pytest.approx(math.sqrt(8) + 2 * math.sqrt(2) / math.sqrt(math.pi) * (1 + 2 * math.sqrt(0.5)), rel=1e-12)


class TestChi2Integral:
    def test_point_mass(self, point_mass):
        assert chi2_mean_integral(point_mass, 1.0).value == 0.0

    @pytest.mark.parametrize("var,sigma", [(0.25, 1.0), (1.0, 2.0), (0.1, 0.5)])
    def test_closed_form_1d(self, var, sigma):
        spec = Gaussian([0.3], [[var]])
        assert chi2_mean_integral(spec, sigma, make_grid(spec, sigma, 1e-14, 4000)).value == pytest.approx(gaussian_j(var, sigma), rel=1e-6)

    def test_closed_form_2d(self):
        cov = np.array([[0.3, 0.1], [0.1, 0.2]])
        spec = Gaussian([0.0, 0.0], cov)
        est = chi2_mean_integral(spec, 1.0, make_grid(spec, 1.0, 1e-10, 300))
        assert est.value == pytest.approx(gaussian_j(cov, 1.0), rel=1e-5)

    def test_grid_vs_importance(self, g025):
        a = chi2_mean_integral(g025, 1.0, make_grid(g025, 1.0, 1e-8, 2000))
        b = chi2_mean_integral(g025, 1.0, ImportanceRule(default_proposal(g025, 1.0), 10**6, 5))
        assert abs(a.value - b.value) < 3 * combined(a, b)

    @pytest.mark.parametrize("name", ["gaussian", "mixture", "box", "cloud"])
    def test_nonnegative(self, name):
        assert chi2_mean_integral(families(2)[name], 0.9).value >= 0


class TestLemma2:
    def test_check_holds(self):
        r = lemma2_check(0.5, 1.0)
        assert r.holds and r.rhs == pytest.approx(1 / math.sqrt(2))

    def test_check_fails(self):
        assert not lemma2_check(0.71, 1.0).holds

    def test_bound_dominates_j(self, g025):
        j = chi2_mean_integral(g025, 1.0).value
        for eta in (0.05, 0.1, 0.2):
            assert lemma2_bound(g025, 1.0, 0.5, eta) >= j

    def test_bound_closed_form(self, g025):
        # C = E exp(-(1 + 1/eta) X^2 / 2) = (1 + (1 + 1/eta) * 0.25)^{-1/2} for X ~ N(0, 0.25).
        eta = 0.1
        c = (1 + (1 + 1 / eta) * 0.25) ** -0.5
        expected = (1 - eta) ** -0.5 / c * (1 - 2 * 1.1 * 0.25 / 0.9) ** -0.5
        assert lemma2_bound(g025, 1.0, 0.5, eta) == pytest.approx(expected, rel=1e-12)

    def test_eta_condition(self, g025):
        with pytest.raises(ConfigError, match="violates"):
            lemma2_bound(g025, 1.0, 0.65, 0.2)
        with pytest.raises(ConfigError):
            lemma2_bound(g025, 1.0, 0.5, 1.0)

    def test_best_bound(self, g025):
        best, eta = lemma2_best_bound(g025, 1.0)
        assert best <= lemma2_bound(g025, 1.0, 0.5, 0.1)
        assert best >= chi2_mean_integral(g025, 1.0).value
        assert 0 < eta < 1

    @pytest.mark.parametrize("name", ["gaussian", "box", "cloud", "mixture"])
    def test_dominance_across_families(self, name):
        spec = families(1)[name]
        from smoothdiv.measures import subgaussian_parameter

        beta = subgaussian_parameter(spec)
        sigma = 3.0 * beta + 0.5
        j = chi2_mean_integral(spec, sigma).value
        assert lemma2_best_bound(spec, sigma)[0] >= j


class TestLemma3:
    def test_identity(self):
        for sigma in (0.01, 1.0, 10.0):
            assert lemma3_check(np.eye(3), sigma).holds

    def test_diag_fails(self):
        assert not lemma3_check(np.diag([1.0, 2.0]), 1.0).holds

    def test_diag_holds_wider(self):
        r = lemma3_check(np.diag([1.0, 2.0]), 1.5)
        assert r.holds and r.rhs == pytest.approx(2.125)

    @given(st.floats(0.01, 10), st.floats(0.01, 10))
    def test_isotropic_always_holds(self, beta, sigma):
        assert lemma3_check(beta**2 * np.eye(2), sigma).holds

    def test_general_form(self):
        assert lemma3_general_check(0.9, 0.5, 1.0).holds
        assert not lemma3_general_check(1.0, 0.5, 1.0).holds
        assert not lemma3_general_check(1.3, 0.2, 1.0).holds

    def test_rejects_bad_input(self):
        with pytest.raises(ConfigError):
            lemma3_check([[1.0, 0.5], [0.0, 1.0]], 1.0)
        with pytest.raises(ConfigError):
            lemma3_check(np.diag([-1.0, 1.0]), 1.0)


class TestMgf:
    @pytest.mark.parametrize("d", [1, 2])
    def test_equality_case(self, d):
        spec = Gaussian(np.zeros(d), 0.3 * np.eye(d))
        (r,) = mgf_check(spec, [0.5], seed=d)
        assert r.holds
        assert abs(r.lhs - 2 ** (d / 2)) < 3 * r.params["se"]

    def test_small_fraction(self):
        (r,) = mgf_check(Gaussian([0.0], [[1.0]]), [1e-6])
        assert r.lhs == pytest.approx(1.0, abs=1e-5) and r.rhs == pytest.approx(1.0, abs=1e-5)

    def test_anisotropic_strict(self):
        (r,) = mgf_check(Gaussian([0.0, 0.0], np.diag([0.25, 0.0625])), [0.5])
        assert r.params["beta"] == pytest.approx(0.5)
        assert r.params["exact_lhs"] < r.rhs
        assert r.lhs < r.rhs and r.holds

    def test_rejects(self):
        with pytest.raises(ConfigError):
            mgf_check(UniformBox([0.0], [1.0]), [0.5])
        with pytest.raises(ConfigError):
            mgf_check(Gaussian([0.0], [[1.0]]), [1.0])


class TestConcentration:
    def test_value(self):
        assert concentration_bound(100, 0.1) == pytest.approx(math.exp(-0.5), abs=1e-12)

    def test_small_t(self):
        assert concentration_bound(10, 1e-9) == pytest.approx(1.0)

    @given(st.integers(1, 10_000), st.floats(1e-3, 1.0))
    def test_monotone(self, n, t):
        assert concentration_bound(n + 1, t) <= concentration_bound(n, t)
        assert concentration_bound(n, 1.01 * t) <= concentration_bound(n, t)

    def test_rejects(self):
        with pytest.raises(ConfigError):
            concentration_bound(0, 0.1)
        with pytest.raises(ConfigError):
            concentration_bound(10, 0.0)


class TestProbes:
    def test_point_mass_zero(self, point_mass):
        assert chi2_divergence_probe(point_mass, 1.0, [1.0, 5.0, 10.0]) == [0.0, 0.0, 0.0]

    def test_nondecreasing(self):
        values = chi2_divergence_probe(families(1)["mixture"], 0.6, [1, 2, 4, 8, 16])
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_contained_case_saturates(self, g025):
        small, large = chi2_divergence_probe(g025, 1.0, [5.0, 40.0])
        assert large / small < 1.01

    def test_slow_saturation_for_wide_gaussian(self):
        # J is finite (= 4) but its truncations approach it slowly.
        spec = Gaussian([0.0], [[4.0]])
        values = chi2_divergence_probe(spec, 1.0, [5.0, 40.0])
        assert values[0] == pytest.approx(1.745, abs=2e-3)
        assert values[1] == pytest.approx(gaussian_j(4.0, 1.0), abs=1e-4)

    def test_condition_probe_verdicts(self, g025):
        assert condition_probe(g025, 1.0, "chi2").holds
        assert condition_probe(g025, 1.0, "tv").holds
        assert not condition_probe(Gaussian([0.0], [[4.0]]), 1.0, "chi2").holds

    def test_rejects(self, g025):
        with pytest.raises(ConfigError):
            chi2_divergence_probe(g025, 1.0, [2.0, 1.0])
        with pytest.raises(ConfigError):
            condition_probe(g025, 1.0, "kl")


def test_report_record():
    r = ConditionReport("lemma3", False, 2.0, 1.5, "<", {"sigma": np.float64(1.0)})
    doc = json.loads(r.to_record())
    assert doc == {"name": "lemma3", "holds": False, "lhs": 2.0, "rhs": 1.5, "relation": "<", "params": {"sigma": 1.0}}
