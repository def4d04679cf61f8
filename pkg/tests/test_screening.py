import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from oracles import mc_moment, mc_posterior_h0
from sharedkernel.model import GibbsConfig, KernelDictionary, ScreeningDataset
from sharedkernel.screening import (draw_two_group_weights, gibbs_allocate_two_group,
                                    log_bayes_factor, log_posterior_h0, log_prob_counts_h0,
                                    log_prob_counts_h1, permutation_null, posterior_h0_given_counts,
                                    screen, update_p0)
from sharedkernel.simulation import simulate_screening_dataset

SEPARATED = KernelDictionary([0.15, 0.5, 0.85], [0.05, 0.05, 0.05], [1.0, 1.0, 1.0])


@st.composite
def count_pairs(draw, max_k=5, max_count=30):
    K = draw(st.integers(2, max_k))
    counts = st.lists(st.integers(0, max_count), min_size=K, max_size=K)
    alpha = draw(st.lists(st.floats(0.1, 5.0), min_size=K, max_size=K))
    return np.array(draw(counts)), np.array(draw(counts)), np.array(alpha)


class TestMarginals:
    def test_empty_counts(self):
        assert log_prob_counts_h0([0, 0, 0], [0, 0, 0], [0.5, 1, 2]) == 0.0
        assert log_prob_counts_h1([0, 0], [0, 0], [1, 1]) == 0.0

    def test_h0_hand_value(self):
        assert log_prob_counts_h0([1, 0], [0, 1], [1, 1]) == pytest.approx(math.log(1 / 6), abs=1e-12)

    def test_h1_hand_value(self):
        assert log_prob_counts_h1([1, 0], [0, 1], [1, 1]) == pytest.approx(math.log(1 / 4), abs=1e-12)

    def test_h0_monte_carlo(self, rng):
        est, se = mc_moment([1.0, 1.0, 1.0], [2, 1, 1], rng)
        exact = math.exp(log_prob_counts_h0([2, 1, 1], [0, 0, 0], [1, 1, 1]))
        assert abs(est - exact) < 3 * se

    @given(count_pairs())
    def test_h1_swap(self, c):
        n0, n1, alpha = c
        assert log_prob_counts_h1(n0, n1, alpha) == log_prob_counts_h1(n1, n0, alpha)

    def test_negative_counts(self):
        with pytest.raises(ValueError):
            log_prob_counts_h0([-1, 2], [0, 0], [1, 1])


class TestPosterior:
    def test_hand_oracles(self):
        assert abs(posterior_h0_given_counts([1, 0], [0, 1], [1, 1], 0.5) - 0.4) < 1e-12
        assert abs(posterior_h0_given_counts([2, 0], [0, 2], [1, 1], 0.5) - 3 / 13) < 1e-12

    @given(count_pairs())
    def test_degenerate_priors(self, c):
        n0, n1, alpha = c
        assert posterior_h0_given_counts(n0, n1, alpha, 1.0) == 1.0
        assert posterior_h0_given_counts(n0, n1, alpha, 0.0) == 0.0

    @given(count_pairs())
    def test_group_swap(self, c):
        n0, n1, alpha = c
        assert posterior_h0_given_counts(n0, n1, alpha, 0.3) == posterior_h0_given_counts(n1, n0, alpha, 0.3)

    @given(count_pairs(), st.randoms())
    def test_kernel_permutation(self, c, rnd):
        n0, n1, alpha = c
        perm = list(range(len(alpha)))
        rnd.shuffle(perm)
        assert (posterior_h0_given_counts(n0, n1, alpha, 0.4)
                == posterior_h0_given_counts(n0[perm], n1[perm], alpha[perm], 0.4))

    @given(count_pairs(max_count=10), st.floats(0.01, 0.98), st.floats(0.001, 0.01))
    def test_increasing_in_p0(self, c, p, dp):
        n0, n1, alpha = c
        lo = log_posterior_h0(n0, n1, alpha, p)[0]
        hi = log_posterior_h0(n0, n1, alpha, p + dp)[0]
        assert hi > lo

    def test_monte_carlo_oracle(self, rng):
        post, se = mc_posterior_h0([2, 1, 0], [0, 1, 3], [1.0, 0.5, 2.0], 0.5, rng)
        exact = posterior_h0_given_counts([2, 1, 0], [0, 1, 3], [1.0, 0.5, 2.0], 0.5)
        assert abs(post - exact) < 3 * se

    def test_finite_at_large_n(self):
        n0 = np.array([4e5, 6e5])
        n1 = np.array([6e5, 4e5])
        lp, lq = log_posterior_h0(n0, n1, [1, 1], 0.5)
        assert np.isfinite(lp) and np.isfinite(lq)
        assert np.isfinite(log_bayes_factor(n0, n0, [1, 1]))

    def test_log_complement(self):
        lp, lq = log_posterior_h0([3, 1], [0, 4], [1, 1], 0.5)
        assert np.exp(lp) + np.exp(lq) == pytest.approx(1.0, abs=1e-15)


class TestWeightDraws:
    def test_shared_when_h0_certain(self, rng):
        d = draw_two_group_weights(np.array([[3, 1, 0]]), np.array([[0, 2, 2]]), [1, 1, 1], 1.0, rng)
        assert np.array_equal(d.weights0, d.weights1)

    def test_independent_when_h1_certain(self, rng):
        n = 10_000
        n0 = np.tile([3, 1], (n, 1))
        n1 = np.tile([1, 3], (n, 1))
        d = draw_two_group_weights(n0, n1, [1, 1], np.zeros(n), rng)
        r = np.corrcoef(d.weights0[:, 0], d.weights1[:, 0])[0, 1]
        assert abs(r) < 3 / np.sqrt(n)

    def test_mixture_mean(self, rng):
        n = 100_000
        n0 = np.array([5.0, 1.0, 0.0])
        n1 = np.array([0.0, 2.0, 4.0])
        alpha = np.array([1.0, 1.0, 1.0])
        p = 0.3
        d = draw_two_group_weights(np.tile(n0, (n, 1)), np.tile(n1, (n, 1)), alpha, np.full(n, p), rng)
        pooled = (alpha + n0 + n1) / (alpha + n0 + n1).sum()
        sep = (alpha + n0) / (alpha + n0).sum()
        expected = p * pooled + (1 - p) * sep
        se = d.weights0.std(0) / np.sqrt(n)
        assert np.all(np.abs(d.weights0.mean(0) - expected) < 4 * se)

    def test_convex_mode(self, rng):
        d = draw_two_group_weights([[3, 1]], [[1, 3]], [1, 1], 0.5, rng, mode="convex")
        assert abs(d.weights0.sum() - 1) < 1e-12 and np.isnan(d.shared).all()


class TestP0Update:
    def test_empty(self, rng):
        draws = [update_p0([], (1, 1), rng) for _ in range(20_000)]
        assert abs(np.mean(draws) - 0.5) < 0.01

    def test_beta_11_1(self, rng):
        draws = np.array([update_p0(np.ones(10), (1, 1), rng) for _ in range(100_000)])
        assert abs(draws.mean() - 11 / 12) < 0.005

    def test_beta_6_6_symmetric(self, rng):
        draws = np.array([update_p0(np.full(10, 0.5), (1, 1), rng) for _ in range(50_000)])
        assert abs(draws.mean() - 0.5) < 0.005
        assert stats.kstest(draws, stats.beta(6, 6).cdf).pvalue > 0.001


class TestAllocation:
    def test_degenerate_weights(self, rng):
        log_lik = np.log(np.full((50, 2), 0.5))
        alloc = gibbs_allocate_two_group(log_lik, np.arange(50) % 2, [1.0, 0.0], [1.0, 0.0], rng)
        assert np.all(alloc == 0)

    def test_group_specific_weights(self, rng):
        n = 100_000
        log_lik = np.zeros((n, 2))
        group = np.arange(n) % 2
        alloc = gibbs_allocate_two_group(log_lik, group, [0.3, 0.7], [0.9, 0.1], rng)
        assert abs(np.mean(alloc[group == 0] == 0) - 0.3) < 0.01
        assert abs(np.mean(alloc[group == 1] == 0) - 0.9) < 0.01


def small_config(**kw):
    base = dict(iterations=200, burn_in=50, seed=3)
    base.update(kw)
    return GibbsConfig(**base)


class TestScreen:
    def test_single_kernel_is_uninformative(self):
        ds = ScreeningDataset(np.random.default_rng(0).random((1, 20)), np.arange(20) % 2)
        d = KernelDictionary([0.5], [0.3], [1.0])
        res = screen(ds, d, small_config(p0_fixed=0.5))
        assert res.post_h0[0] == 0.5

    def test_duplicated_values_favour_h0(self):
        x = np.random.default_rng(1).random(60)
        values = np.concatenate([x, x])[None]
        group = np.r_[np.zeros(60, int), np.ones(60, int)]
        res = screen(ScreeningDataset(values, group), SEPARATED, small_config(p0_fixed=0.5))
        assert res.post_h0[0] > 0.5

    def test_outputs_well_formed(self):
        ds, _ = simulate_screening_dataset(30, 40, SEPARATED, 0.5, np.random.default_rng(2))
        res = screen(ds, SEPARATED, small_config())
        assert np.all((res.post_h0 >= 0) & (res.post_h0 <= 1))
        assert np.allclose(res.mean_weights0.sum(1), 1, atol=1e-9)
        assert np.allclose(res.mean_weights1.sum(1), 1, atol=1e-9)
        assert res.p0_draws.shape == (200,)

    def test_fixed_p0_is_not_updated(self):
        ds, _ = simulate_screening_dataset(10, 20, SEPARATED, 0.5, np.random.default_rng(2))
        res = screen(ds, SEPARATED, small_config(p0_fixed=0.5))
        assert np.all(res.p0_draws == 0.5)

    def test_thread_and_cache_invariance(self):
        ds, _ = simulate_screening_dataset(50, 30, SEPARATED, 0.5, np.random.default_rng(4))
        a = screen(ds, SEPARATED, small_config(block_size=8, threads=1))
        b = screen(ds, SEPARATED, small_config(block_size=8, threads=3))
        c = screen(ds, SEPARATED, small_config(block_size=8, cache_bytes=0))
        for other in (b, c):
            assert np.array_equal(a.post_h0, other.post_h0)
            assert np.array_equal(a.p0_draws, other.p0_draws)

    def test_log_odds_consistent(self):
        ds, _ = simulate_screening_dataset(10, 30, SEPARATED, 0.5, np.random.default_rng(5))
        res = screen(ds, SEPARATED, small_config())
        inside = (res.post_h0 > 1e-6) & (res.post_h0 < 1 - 1e-6)
        expected = np.log(res.post_h0[inside]) - np.log1p(-res.post_h0[inside])
        assert np.allclose(res.log_odds[inside], expected, atol=1e-8)


class TestPermutationNull:
    def test_identity_reproduces_screen(self):
        ds, _ = simulate_screening_dataset(8, 20, SEPARATED, 0.5, np.random.default_rng(6))
        cfg = small_config()
        ref = screen(ds, SEPARATED, cfg)
        again = screen(ds.with_group(ds.group[np.arange(ds.n_subjects)]), SEPARATED, cfg)
        assert np.array_equal(ref.post_h0, again.post_h0)

    def test_group_sizes_preserved(self, rng):
        ds, _ = simulate_screening_dataset(4, 21, SEPARATED, 0.5, np.random.default_rng(6))
        perms, post = permutation_null(ds, SEPARATED, small_config(iterations=20, burn_in=5), 3, rng)
        assert post.shape == (3, 4)
        for p in perms:
            assert sorted(p.tolist()) == list(range(21))
            assert ds.group[p].sum() == ds.group.sum()

    def test_requires_a_permutation(self, rng):
        ds, _ = simulate_screening_dataset(2, 10, SEPARATED, 0.5, np.random.default_rng(6))
        with pytest.raises(ValueError):
            permutation_null(ds, SEPARATED, small_config(), 0, rng)

    def test_exchangeable_under_h0(self):
        passes = 0
        reps = 20
        cfg = small_config(iterations=150, burn_in=50, p0_fixed=0.5)
        for r in range(reps):
            rng = np.random.default_rng(100 + r)
            ds, _ = simulate_screening_dataset(100, 40, SEPARATED, 1.0, rng)
            obs = screen(ds, SEPARATED, cfg).post_h0
            _, perm = permutation_null(ds, SEPARATED, cfg, 1, rng)
            passes += stats.ks_2samp(obs, perm[0]).pvalue > 0.01
        assert passes >= 0.95 * reps
