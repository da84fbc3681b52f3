import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import families
from smoothdiv.errors import ConfigError, NumericalError
from smoothdiv.measures import (
    Gaussian,
    GaussianMixture,
    PointCloud,
    UniformBox,
    covariance_kernel,
    covariance_matrix,
    gaussian_density,
    sample,
    smoothed_density,
    spec_from_dict,
    squared_kernel_mean,
    subgaussian_parameter,
    tail_probability,
    tail_probability_se,
    translate,
    variance_function,
    variance_over_density,
)


def phi1(u, sigma):
    """Kernel at many 1-d points."""
    return gaussian_density(np.asarray(u, dtype=float)[..., None], sigma)


def mc_mean_se(values):
    return values.mean(), values.std(ddof=1) / math.sqrt(values.size)


class TestGaussianDensity:
    def test_origin_1d(self):
        assert gaussian_density(0.0, 1.0) == pytest.approx(0.3989423, abs=1e-7)

    def test_origin_2d(self):
        assert gaussian_density([0.0, 0.0], 1.0) == pytest.approx(0.1591549, abs=1e-7)

    def test_wide_kernel(self):
        assert gaussian_density(2.0, 2.0) == pytest.approx(0.1209854, abs=1e-7)

    def test_rejects_bad_sigma(self):
        for bad in (0.0, -1.0, float("nan"), float("inf")):
            with pytest.raises(ConfigError, match="sigma"):
                gaussian_density(0.0, bad)

    @given(st.floats(-30, 30), st.floats(0.05, 10))
    def test_range(self, x, sigma):
        v = gaussian_density(x, sigma)
        assert 0.0 <= v <= (2 * math.pi * sigma**2) ** -0.5 * (1 + 1e-14)


class TestSample:
    def test_point_mass(self):
        pts = sample(PointCloud([[0.0]]), 5, 1).points
        assert pts.shape == (5, 1) and np.all(pts == 0.0)

    def test_gaussian_mean(self):
        n = 10**5
        pts = sample(Gaussian(np.zeros(2), np.eye(2)), n, 3).points
        assert np.all(np.abs(pts.mean(axis=0)) < 4 / math.sqrt(n))

    def test_uniform_mean(self):
        n = 10**5
        pts = sample(UniformBox([0.0], [1.0]), n, 4).points
        assert abs(pts.mean() - 0.5) < 4 * (1 / math.sqrt(12)) / math.sqrt(n)

    def test_deterministic(self):
        spec = families(2)["mixture"]
        assert np.array_equal(sample(spec, 50, 9).points, sample(spec, 50, 9).points)
        assert not np.array_equal(sample(spec, 50, 9).points, sample(spec, 50, 10).points)

    def test_mixture_moments(self):
        spec = families(1)["mixture"]
        pts = sample(spec, 200_000, 5).points
        assert pts.mean() == pytest.approx(spec.mean[0], abs=4 * math.sqrt(spec.covariance[0, 0] / 200_000))
        assert pts.var() == pytest.approx(spec.covariance[0, 0], rel=0.02)

    def test_rejects_non_psd(self):
        with pytest.raises(ConfigError):
            Gaussian([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])

    def test_rejects_empty(self):
        with pytest.raises(ConfigError):
            sample(Gaussian([0.0], [[1.0]]), 0, 1)


class TestSmoothedDensity:
    def test_point_mass_is_kernel(self):
        x = np.linspace(-3, 3, 7)
        assert np.allclose(smoothed_density(PointCloud([[0.0]]), 0.7, x), phi1(x, 0.7), rtol=1e-14)

    def test_gaussian_against_monte_carlo(self):
        spec = Gaussian([0.0], [[0.36]])
        draws = sample(spec, 10**6, 11).points[:, 0]
        for x in (0.0, 0.8, -1.7):
            mean, se = mc_mean_se(phi1(x - draws, 1.0))
            assert abs(smoothed_density(spec, 1.0, x) - mean) < 3 * se
            assert smoothed_density(spec, 1.0, x) == pytest.approx(gaussian_density(x, math.sqrt(1.36)), rel=1e-12)

    def test_uniform_closed_form(self):
        value = smoothed_density(UniformBox([0.0], [1.0]), 1.0, 0.5)
        assert value == pytest.approx(0.3829249, abs=1e-7)
        y = (np.arange(200_000) + 0.5) / 200_000
        assert value == pytest.approx(np.mean(phi1(0.5 - y, 1.0)), abs=1e-10)

    def test_far_tail_log(self):
        # The density underflows at x = 30 but its logarithm stays accurate.
        from scipy.special import log_ndtr

        from smoothdiv.measures import log_smoothed_density

        value = log_smoothed_density(UniformBox([0.0], [1.0]), 0.5, 30.0)
        oracle = log_ndtr(-58.0) + np.log1p(-np.exp(log_ndtr(-60.0) - log_ndtr(-58.0)))
        assert value == pytest.approx(oracle, rel=1e-10)

    @pytest.mark.parametrize("d", [1, 2])
    @pytest.mark.parametrize("name", ["gaussian", "mixture", "box", "cloud"])
    def test_integrates_to_one(self, d, name):
        from smoothdiv.integration import integrate_grid, make_grid

        spec = families(d)[name]
        grid = make_grid(spec, 0.8, 1e-7, 2000 if d == 1 else 300)
        est = integrate_grid(lambda x: smoothed_density(spec, 0.8, x), grid)
        assert est.value == pytest.approx(1.0, abs=1e-4)


class TestVariance:
    def test_point_mass(self):
        pm = PointCloud([[0.0]])
        assert squared_kernel_mean(pm, 1.0, 0.0) == pytest.approx(1 / (2 * math.pi), rel=1e-14)
        assert np.all(variance_function(pm, 1.0, np.linspace(-5, 5, 11)) == 0.0)

    def test_squared_kernel_against_monte_carlo(self, g025):
        draws = sample(g025, 10**6, 12).points[:, 0]
        mean, se = mc_mean_se(phi1(1.0 - draws, 1.0) ** 2)
        assert abs(squared_kernel_mean(g025, 1.0, 1.0) - mean) < 3 * se

    def test_variance_against_monte_carlo(self, g025):
        draws = sample(g025, 10**6, 13).points[:, 0]
        y = phi1(0.0 - draws, 1.0)
        # Standard error of the sample variance from the fourth central moment.
        c = y - y.mean()
        se = math.sqrt((np.mean(c**4) - np.mean(c**2) ** 2) / y.size)
        assert abs(variance_function(g025, 1.0, 0.0) - y.var(ddof=1)) < 3 * se

    def test_symmetry(self):
        spec = PointCloud([[-1.0], [1.0]])
        x = np.linspace(0, 6, 13)
        assert np.allclose(variance_function(spec, 0.6, x), variance_function(spec, 0.6, -x), rtol=1e-12)

    @pytest.mark.parametrize("d", [1, 2])
    @pytest.mark.parametrize("name", ["gaussian", "mixture", "box", "cloud"])
    def test_ordering(self, d, name):
        spec = families(d)[name]
        x = sample(Gaussian(np.zeros(d), 9 * np.eye(d)), 500, 2).points
        v = variance_function(spec, 0.9, x)
        m2 = squared_kernel_mean(spec, 0.9, x)
        assert np.all(v >= 0)
        assert np.all(v <= m2 * (1 + 1e-12))
        assert np.all(m2 <= (2 * math.pi * 0.81) ** -d)

    def test_squared_kernel_dominates_square(self):
        spec = families(1)["mixture"]
        x = np.linspace(-8, 8, 101)
        assert np.all(squared_kernel_mean(spec, 0.5, x) >= smoothed_density(spec, 0.5, x) ** 2)

    def test_ratio_in_far_tail(self, g025):
        r = variance_over_density(g025, 1.0, np.array([0.0, 20.0, 40.0]))
        assert np.all(np.isfinite(r)) and np.all(r >= 0)


class TestCovarianceKernel:
    @pytest.mark.parametrize("name", ["gaussian", "mixture", "box", "cloud"])
    def test_diagonal_and_symmetry(self, name):
        spec = families(2)[name]
        rng = np.random.default_rng(0)
        for _ in range(10):
            x, y = rng.normal(size=2), rng.normal(size=2)
            assert covariance_kernel(spec, 0.7, x, x) == pytest.approx(variance_function(spec, 0.7, x), rel=1e-9, abs=1e-15)
            assert covariance_kernel(spec, 0.7, x, y) == pytest.approx(covariance_kernel(spec, 0.7, y, x), rel=1e-12)

    def test_against_monte_carlo(self, g025):
        draws = sample(g025, 10**6, 14).points[:, 0]
        a, b = phi1(0.3 - draws, 1.0), phi1(-0.9 - draws, 1.0)
        prod = (a - a.mean()) * (b - b.mean())
        mean, se = mc_mean_se(prod)
        assert abs(covariance_kernel(g025, 1.0, 0.3, -0.9) - mean) < 3 * se

    @settings(max_examples=30, deadline=None)
    @given(st.sampled_from(["gaussian", "mixture", "box", "cloud"]), st.integers(1, 2),
           st.floats(0.2, 3.0), st.integers(0, 2**32 - 1))
    def test_gram_psd(self, name, d, sigma, seed):
        spec = families(d)[name]
        pts = np.random.default_rng(seed).normal(scale=2.0, size=(10, d))
        K = covariance_matrix(spec, sigma, pts)
        assert np.allclose(K, K.T)
        lam = np.linalg.eigvalsh(K)
        assert lam[0] >= -1e-10 * max(lam[-1], 1e-300)


class TestTails:
    def test_three_four_five(self):
        spec = PointCloud([[3.0, 4.0]])
        assert tail_probability(spec, 4.9) == 1.0
        assert tail_probability(spec, 5.1) == 0.0

    def test_standard_normal(self):
        assert tail_probability(Gaussian([0.0], [[1.0]]), 1.96) == pytest.approx(2 * stats.norm.sf(1.96), rel=1e-12)
        assert tail_probability(Gaussian([0.0], [[1.0]]), 1.96) == pytest.approx(0.05, abs=1e-3)

    def test_at_zero(self):
        for spec in families(2).values():
            if not isinstance(spec, PointCloud):
                assert tail_probability(spec, 0.0) == pytest.approx(1.0)

    def test_anisotropic_monte_carlo(self):
        spec = Gaussian([0.0, 0.0], [[1.0, 0.0], [0.0, 3.0]])
        z = np.random.default_rng(1).standard_normal((400_000, 2)) * np.sqrt([1.0, 3.0])
        ref = np.mean(np.linalg.norm(z, axis=1) > 2.0)
        se = tail_probability_se(spec, 2.0)
        assert se > 0
        assert abs(tail_probability(spec, 2.0) - ref) < 4 * math.hypot(se, math.sqrt(ref * (1 - ref) / 400_000))

    @pytest.mark.parametrize("name", ["gaussian", "mixture", "box", "cloud"])
    def test_nonincreasing(self, name):
        t = np.linspace(0, 6, 200)
        p = tail_probability(families(2)[name], t)
        assert np.all(np.diff(p) <= 0)


class TestSubGaussian:
    def test_gaussian(self):
        assert subgaussian_parameter(Gaussian(np.zeros(3), 0.25 * np.eye(3))) == pytest.approx(0.5)

    def test_rademacher(self):
        assert subgaussian_parameter(PointCloud([[-1.0], [1.0]], [0.5, 0.5])) == pytest.approx(1.0)

    def test_mean_ignored(self):
        assert subgaussian_parameter(Gaussian([5.0, -3.0], np.diag([1.0, 2.0]))) == pytest.approx(math.sqrt(2.0))

    @pytest.mark.parametrize("frac", [0.1, 0.25, 0.4])
    def test_mgf_property(self, frac):
        spec = Gaussian([1.0, -2.0], [[0.5, 0.1], [0.1, 0.3]])
        beta = subgaussian_parameter(spec)
        eta = frac / (2 * beta**2)
        x = sample(spec, 10**6, 21).points - spec.mean
        mean, se = mc_mean_se(np.exp(eta * np.sum(x * x, axis=1)))
        assert mean <= (1 - 2 * beta**2 * eta) ** -1.0 * (1 + 3 * se / mean)

    def test_isotropic_equality(self):
        spec = Gaussian([0.0, 0.0], 0.49 * np.eye(2))
        eta = 0.25 / (2 * 0.49)
        x = sample(spec, 10**6, 22).points
        mean, se = mc_mean_se(np.exp(eta * np.sum(x * x, axis=1)))
        assert abs(mean - (1 - 0.25) ** -1.0) < 3 * se


class TestConfigRoundTrip:
    @pytest.mark.parametrize("d", [1, 2])
    @pytest.mark.parametrize("name", ["gaussian", "mixture", "box", "cloud"])
    def test_round_trip(self, d, name):
        spec = families(d)[name]
        again = spec_from_dict(spec.to_dict())
        x = np.random.default_rng(0).normal(size=(5, d))
        assert np.array_equal(smoothed_density(spec, 0.5, x), smoothed_density(again, 0.5, x))

    def test_errors(self):
        with pytest.raises(ConfigError, match="variant"):
            spec_from_dict({"variant": "cauchy"})
        with pytest.raises(ConfigError, match="missing"):
            spec_from_dict({"variant": "gaussian", "mean": [0.0]})
        with pytest.raises(ConfigError):
            spec_from_dict({"variant": "point_cloud", "points": [[0.0], [1.0]], "weights": [0.5, 0.6]})
        with pytest.raises(ConfigError, match="dimension"):
            spec_from_dict({"variant": "uniform_box", "lo": [0.0], "hi": [1.0], "dimension": 2})

    def test_translate(self):
        spec = families(2)["mixture"]
        moved = translate(spec, [1.0, -2.0])
        x = np.array([[0.3, 0.1]])
        assert smoothed_density(moved, 0.5, x + [1.0, -2.0]) == pytest.approx(smoothed_density(spec, 0.5, x), rel=1e-12)


def test_variance_flags_large_negativity(monkeypatch):
    import smoothdiv.measures as m

    spec = Gaussian([0.0], [[0.25]])
    monkeypatch.setattr(m, "_log_squared_kernel_mean", lambda s, sig, pts: np.full(pts.shape[0], -50.0))
    with pytest.raises(NumericalError):
        variance_function(spec, 1.0, 0.0)
