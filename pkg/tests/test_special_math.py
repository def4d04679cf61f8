import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from sharedkernel.special_math import (TruncNormalKernel, check_concentration, digamma,
                                       log_mv_beta, log_ndtr_diff, normal_cdf, normal_quantile,
                                       trigamma, trunc_normal_cdf, trunc_normal_logpdf,
                                       trunc_normal_mean, trunc_normal_pdf, trunc_normal_quantile,
                                       trunc_normal_sample, untruncate)

mus = st.floats(0.0, 1.0)
sigmas = st.floats(0.01, 2.0)


def trapezoid_integral(f, n=10_000):
    x = np.linspace(0.0, 1.0, n)
    return np.trapezoid(f(x), x)


class TestLogMvBeta:
    def test_known_values(self):
        assert log_mv_beta([1.0, 1.0]) == 0.0
        assert log_mv_beta([2.0, 2.0]) == pytest.approx(math.log(1 / 6), abs=1e-12)
        assert log_mv_beta([1.0, 1.0, 1.0]) == pytest.approx(math.log(0.5), abs=1e-12)

    def test_matches_gamma_function_oracle(self):
        a = [0.3, 2.5, 4.0]
        expected = math.log(math.gamma(0.3) * math.gamma(2.5) * math.gamma(4.0) / math.gamma(6.8))
        assert log_mv_beta(a) == pytest.approx(expected, rel=1e-13)

    @given(st.lists(st.floats(0.01, 50.0), min_size=1, max_size=9), st.randoms())
    def test_permutation_symmetric(self, alpha, rnd):
        shuffled = list(alpha)
        rnd.shuffle(shuffled)
        assert log_mv_beta(alpha) == log_mv_beta(shuffled)

    def test_finite_for_huge_counts(self):
        n = np.array([3e5, 5e5, 2e5])
        assert np.isfinite(log_mv_beta(n + 1.0))

    def test_batched(self):
        out = log_mv_beta(np.array([[1.0, 1.0], [2.0, 2.0]]))
        assert out.shape == (2,)

    @pytest.mark.parametrize("bad", [[0.0, 1.0], [-1.0], [np.nan, 1.0], []])
    def test_rejects_invalid(self, bad):
        with pytest.raises(ValueError):
            log_mv_beta(bad)


class TestDigamma:
    def test_euler_mascheroni(self):
        assert digamma(1.0) == pytest.approx(-0.5772156649015329, abs=1e-12)

    @pytest.mark.parametrize("x", [0.5, 2.0, 10.0])
    def test_recurrence(self, x):
        assert abs(digamma(x + 1) - digamma(x) - 1 / x) < 1e-10

    @given(st.floats(0.05, 1e4))
    def test_recurrence_property(self, x):
        assert digamma(x + 1) - digamma(x) == pytest.approx(1 / x, rel=1e-9, abs=1e-10)

    def test_trigamma_at_one(self):
        assert trigamma(1.0) == pytest.approx(math.pi**2 / 6, abs=1e-12)

    def test_trigamma_is_derivative(self):
        x, h = 3.7, 1e-5
        assert trigamma(x) == pytest.approx((digamma(x + h) - digamma(x - h)) / (2 * h), rel=1e-7)

    def test_domain(self):
        with pytest.raises(ValueError):
            digamma(0.0)
        with pytest.raises(ValueError):
            trigamma(-1.0)


class TestNormal:
    def test_cdf_quantile_roundtrip(self):
        p = np.linspace(0.01, 0.99, 17)
        assert np.allclose(normal_cdf(normal_quantile(p, 0.3, 2.0), 0.3, 2.0), p, atol=1e-14)

    def test_quantile_domain(self):
        with pytest.raises(ValueError):
            normal_quantile(1.0)

    def test_log_ndtr_diff_far_tail(self):
        expected = stats.norm.logsf(30) + np.log1p(-np.exp(stats.norm.logsf(40) - stats.norm.logsf(30)))
        assert log_ndtr_diff(30.0, 40.0) == pytest.approx(expected, rel=1e-12)
        assert log_ndtr_diff(-1.0, 1.0) == pytest.approx(np.log(stats.norm.cdf(1) - stats.norm.cdf(-1)))
        assert log_ndtr_diff(1.0, 1.0) == -np.inf


class TestTruncatedNormal:
    def test_outside_support(self):
        assert trunc_normal_logpdf(1.5, 0.5, 0.1) == -np.inf
        assert trunc_normal_logpdf(-0.01, 0.5, 0.1) == -np.inf

    def test_centre_value(self):
        mass = stats.norm.cdf(5) - stats.norm.cdf(-5)
        expected = math.log(1 / (0.1 * math.sqrt(2 * math.pi)) / mass)
        assert trunc_normal_logpdf(0.5, 0.5, 0.1) == pytest.approx(expected, abs=1e-12)
        assert abs(trunc_normal_logpdf(0.5, 0.5, 0.1) - math.log(3.98942)) < 1e-5

    def test_symmetry(self):
        assert trunc_normal_logpdf(0.3, 0.5, 0.1) == pytest.approx(trunc_normal_logpdf(0.7, 0.5, 0.1),
                                                                   abs=1e-13)

    def test_matches_scipy(self):
        x = np.linspace(0, 1, 11)
        mu, s = 0.2, 0.4
        ref = stats.truncnorm((0 - mu) / s, (1 - mu) / s, loc=mu, scale=s)
        assert np.allclose(trunc_normal_pdf(x, mu, s), ref.pdf(x), rtol=1e-12)
        assert np.allclose(trunc_normal_cdf(x, mu, s), ref.cdf(x), rtol=1e-12, atol=1e-15)
        assert trunc_normal_mean(mu, s) == pytest.approx(ref.mean(), rel=1e-12)

    def test_cdf_endpoints(self):
        assert trunc_normal_cdf(1.0, 0.9, 0.3) == 1.0
        assert trunc_normal_cdf(0.0, 0.9, 0.3) == 0.0
        assert trunc_normal_cdf(0.5, 0.5, 0.2) == pytest.approx(0.5, abs=1e-15)

    @pytest.mark.parametrize("x", np.round(np.arange(0.1, 1.0, 0.1), 1))
    def test_quantile_roundtrip_grid(self, x):
        assert abs(trunc_normal_quantile(trunc_normal_cdf(x, 0.4, 0.25), 0.4, 0.25) - x) < 1e-8

    @given(mus, sigmas, st.floats(0.0, 1.0))
    def test_quantile_of_cdf(self, mu, sigma, x):
        p = trunc_normal_cdf(x, mu, sigma)
        if 1e-8 < p < 1 - 1e-8:
            assert abs(trunc_normal_quantile(p, mu, sigma) - x) < 1e-8

    @given(mus, sigmas, st.floats(1e-6, 1 - 1e-6))
    def test_cdf_of_quantile(self, mu, sigma, p):
        assert abs(trunc_normal_cdf(trunc_normal_quantile(p, mu, sigma), mu, sigma) - p) < 1e-8

    # the 10^4-point trapezoid rule itself errs by about h^2 |f'| / 12 at a
    # boundary, which passes 1e-6 once sigma drops below ~0.015
    @given(mus, st.floats(0.02, 5.0))
    def test_integrates_to_one(self, mu, sigma):
        assert abs(trapezoid_integral(lambda x: trunc_normal_pdf(x, mu, sigma)) - 1) < 1e-6

    def test_integrates_to_one_adaptive(self):
        for mu, s in [(0.5, 0.1), (0.0, 0.05), (0.015625, 0.0117), (1.2, 0.3), (-0.5, 1.0)]:
            val, _ = integrate.quad(lambda x: trunc_normal_pdf(x, mu, s), 0, 1, points=[min(max(mu, 0), 1)])
            assert abs(val - 1) < 1e-8

    def test_sampler_mean(self, rng):
        draws = trunc_normal_sample(0.1, 0.2, rng, size=200_000)
        assert draws.min() >= 0 and draws.max() <= 1
        se = draws.std() / np.sqrt(draws.size)
        assert abs(draws.mean() - trunc_normal_mean(0.1, 0.2)) < 4 * se

    def test_quantile_domain(self):
        with pytest.raises(ValueError):
            trunc_normal_quantile(0.0, 0.5, 0.1)

    def test_rejects_bad_scale(self):
        with pytest.raises(ValueError):
            trunc_normal_logpdf(0.5, 0.5, 0.0)
        with pytest.raises(ValueError):
            TruncNormalKernel(0.5, -1.0)

    def test_kernel_object(self):
        k = TruncNormalKernel(0.3, 0.1)
        assert k.precision == pytest.approx(100.0)
        assert k.quantile(k.cdf(0.42)) == pytest.approx(0.42, abs=1e-12)
        assert k.pdf(0.3) == pytest.approx(np.exp(k.logpdf(0.3)))


class TestUntruncate:
    def test_negligible_truncation_is_identity(self):
        x = np.linspace(0.3, 0.7, 9)
        assert np.max(np.abs(untruncate(x, 0.5, 0.05) - x)) < 1e-9

    @given(mus, sigmas)
    def test_strictly_monotone(self, mu, sigma):
        y = untruncate(np.linspace(0.0, 1.0, 201), mu, sigma)
        assert np.all(np.isfinite(y))
        assert np.all(np.diff(y) >= 0)
        # strict where the probability level is inside the [1e-10, 1 - 1e-10] clip
        x = np.linspace(0.0, 1.0, 201)
        p = trunc_normal_cdf(x, mu, sigma)
        live = (p > 1e-9) & (p < 1 - 1e-9)
        assert np.all(np.diff(untruncate(x[live], mu, sigma)) > 0)

    def test_boundaries_finite(self):
        y = untruncate(np.array([0.0, 1.0]), -0.5, 0.1)
        assert np.all(np.isfinite(y))


def test_check_concentration():
    assert check_concentration(2.0).shape == (1,)
    with pytest.raises(ValueError):
        check_concentration([1.0, 0.0])
