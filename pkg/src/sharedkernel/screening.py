"""Two-group screening with a fixed kernel dictionary.

Given allocations, the posterior probability that a site's two groups share
their mixture weights is available in closed form through multivariate beta
functions. The Gibbs sampler in :func:`screen` alternates allocation draws
with that closed form and averages it over sweeps (Rao-Blackwellisation).
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import NamedTuple

import numpy as np
from scipy import special

from .model import (GibbsConfig, KernelDictionary, ScreeningDataset, ScreeningResult,
                    dirichlet_rows, generator, sample_log_categorical, tabulate_counts)
from .special_math import check_concentration, log_mv_beta


class SiteCounts(NamedTuple):
    n0: np.ndarray
    n1: np.ndarray

    @property
    def n(self):
        return np.asarray(self.n0) + np.asarray(self.n1)


def _counts(n0, n1):
    n0 = np.asarray(n0, dtype=float)
    n1 = np.asarray(n1, dtype=float)
    if np.any(n0 < 0) or np.any(n1 < 0):
        raise ValueError("counts must be non-negative")
    return n0, n1


def log_prob_counts_h0(n0, n1, alpha):
    """``log pr(C | H0) = log B(n0 + n1 + alpha) - log B(alpha)``."""
    n0, n1 = _counts(n0, n1)
    alpha = check_concentration(alpha)
    return log_mv_beta(n0 + n1 + alpha) - log_mv_beta(alpha)


def log_prob_counts_h1(n0, n1, alpha):
    """``log pr(C | H1) = log B(n0 + alpha) + log B(n1 + alpha) - 2 log B(alpha)``."""
    n0, n1 = _counts(n0, n1)
    alpha = check_concentration(alpha)
    return log_mv_beta(n0 + alpha) + log_mv_beta(n1 + alpha) - 2.0 * log_mv_beta(alpha)


def log_bayes_factor(n0, n1, alpha):
    """Log Bayes factor of H0 against H1 given allocation counts."""
    return log_prob_counts_h0(n0, n1, alpha) - log_prob_counts_h1(n0, n1, alpha)


def _log_h0_h1(n0, n1, alpha, p0):
    p0 = np.asarray(p0, dtype=float)
    if np.any((p0 < 0) | (p0 > 1)):
        raise ValueError("p0 must lie in [0, 1]")
    with np.errstate(divide="ignore"):
        a = np.log(p0) + log_prob_counts_h0(n0, n1, alpha)
        b = np.log1p(-p0) + log_prob_counts_h1(n0, n1, alpha)
    return a, b


def log_posterior_h0(n0, n1, alpha, p0):
    """``(log pr(H0 | C), log pr(H1 | C))`` with a log-sum-exp denominator."""
    a, b = _log_h0_h1(n0, n1, alpha, p0)
    denom = np.logaddexp(a, b)
    return a - denom, b - denom


def posterior_h0_given_counts(n0, n1, alpha, p0):
    """Closed-form ``pr(H0 | C)`` for one site or a stack of sites."""
    log_h0, _ = log_posterior_h0(n0, n1, alpha, p0)
    return np.exp(log_h0)


def gibbs_allocate_two_group(log_lik, group, weights0, weights1, rng):
    """Draw kernel memberships given group-specific weights.

    ``log_lik`` has shape ``(M, N, K)`` (or ``(N, K)`` for one site) and
    holds ``log f_k(x_mn)``; weights are ``(M, K)``. Returns 0-based indices.
    """
    log_lik = np.asarray(log_lik, dtype=float)
    single = log_lik.ndim == 2
    if single:
        log_lik = log_lik[None]
    w0 = np.atleast_2d(weights0)
    w1 = np.atleast_2d(weights1)
    group = np.asarray(group).ravel()
    with np.errstate(divide="ignore"):
        logw = np.where((group == 1)[None, :, None], np.log(w1)[:, None, :], np.log(w0)[:, None, :])
    out = sample_log_categorical(logw + log_lik, rng)
    return out[0] if single else out


class WeightDraw(NamedTuple):
    weights0: np.ndarray
    weights1: np.ndarray
    shared: np.ndarray


def draw_two_group_weights(n0, n1, alpha, p_m, rng, mode="indicator"):
    """Draw both groups' mixture weights given counts and ``p_m = pr(H0 | C)``.

    With ``mode="indicator"`` a Bernoulli(p_m) indicator decides whether the
    groups share one Dir(alpha + n) draw or get independent
    Dir(alpha + n0), Dir(alpha + n1) draws. ``mode="convex"`` instead mixes
    the shared and group draws with coefficient ``p_m``; ``shared`` is then NaN.
    """
    n0, n1 = _counts(n0, n1)
    alpha = check_concentration(alpha)
    n0 = np.atleast_2d(n0)
    n1 = np.atleast_2d(n1)
    p_m = np.broadcast_to(np.asarray(p_m, dtype=float), n0.shape[:1])
    pooled = dirichlet_rows(n0 + n1 + alpha, rng)
    sep0 = dirichlet_rows(n0 + alpha, rng)
    sep1 = dirichlet_rows(n1 + alpha, rng)
    if mode == "indicator":
        h = rng.random(p_m.shape) < p_m
        w0 = np.where(h[:, None], pooled, sep0)
        w1 = np.where(h[:, None], pooled, sep1)
        return WeightDraw(w0, w1, h)
    if mode == "convex":
        c = p_m[:, None]
        return WeightDraw(c * pooled + (1 - c) * sep0, c * pooled + (1 - c) * sep1,
                          np.full(p_m.shape, np.nan))
    raise ValueError(f"unknown weight draw mode {mode!r}")


def update_p0(site_probs, prior=(1.0, 1.0), rng=None):
    """One Beta(a + sum P_m, b + M - sum P_m) draw."""
    site_probs = np.asarray(site_probs, dtype=float).ravel()
    if np.any((site_probs < 0) | (site_probs > 1)):
        raise ValueError("site probabilities must lie in [0, 1]")
    a, b = prior
    s = float(site_probs.sum())
    return float(rng.beta(a + s, b + site_probs.size - s))


class _Block:
    """Per-block sampler state; each block owns its RNG stream."""

    def __init__(self, values, group, dictionary, rng, cache):
        self.values = values
        self.group = group
        self.dictionary = dictionary
        self.rng = rng
        self.log_lik = dictionary.log_density(values) if cache else None
        K = dictionary.K
        m = values.shape[0]
        prior_mean = dictionary.alpha / dictionary.alpha.sum()
        self.w0 = np.tile(prior_mean, (m, 1))
        self.w1 = self.w0.copy()
        self.sum_p = np.zeros(m)
        self.lse_p = np.full(m, -np.inf)
        self.lse_q = np.full(m, -np.inf)
        self.sum_w0 = np.zeros((m, K))
        self.sum_w1 = np.zeros((m, K))
        self.last_p = np.zeros(m)

    def sweep(self, p0, keep, mode):
        log_lik = self.log_lik if self.log_lik is not None else self.dictionary.log_density(self.values)
        alloc = gibbs_allocate_two_group(log_lik, self.group, self.w0, self.w1, self.rng)
        n0, n1 = tabulate_counts(alloc, self.group, self.dictionary.K)
        log_p, log_q = log_posterior_h0(n0, n1, self.dictionary.alpha, p0)
        p = np.exp(log_p)
        draw = draw_two_group_weights(n0, n1, self.dictionary.alpha, p, self.rng, mode)
        self.w0, self.w1 = draw.weights0, draw.weights1
        self.last_p = p
        if keep:
            self.sum_p += p
            self.lse_p = np.logaddexp(self.lse_p, log_p)
            self.lse_q = np.logaddexp(self.lse_q, log_q)
            self.sum_w0 += self.w0
            self.sum_w1 += self.w1
        return p


def screen(dataset: ScreeningDataset, dictionary: KernelDictionary,
           config: GibbsConfig = GibbsConfig()) -> ScreeningResult:
    """Run the two-group Gibbs sampler over every site with the dictionary held fixed.

    Each sweep draws allocations, evaluates ``p_m = pr(H0 | C_m)`` at the
    current P0, draws the weights, then (if P0 is learned) draws P0 from
    its Beta full conditional. Sites are processed in fixed-size blocks, each
    with its own RNG stream derived from ``config.seed``, so the output does
    not depend on ``config.threads``.
    """
    M = dataset.n_sites
    K = dictionary.K
    starts = list(range(0, M, config.block_size))
    cache = M * dataset.n_subjects * K * 8 <= config.cache_bytes
    blocks = [
        _Block(dataset.values[s:s + config.block_size], dataset.group, dictionary,
               generator(config.seed, 1, b), cache)
        for b, s in enumerate(starts)
    ]
    rng_p0 = generator(config.seed, 0)
    a, b = config.p0_prior
    p0 = config.p0_fixed if config.p0_fixed is not None else a / (a + b)
    total = config.burn_in + config.iterations
    p0_draws = np.empty(config.iterations)
    pool = ThreadPoolExecutor(config.threads) if config.threads > 1 and len(blocks) > 1 else None
    try:
        for t in range(total):
            keep = t >= config.burn_in
            if pool is None:
                for blk in blocks:
                    blk.sweep(p0, keep, config.weight_draw)
            else:
                list(pool.map(lambda blk: blk.sweep(p0, keep, config.weight_draw), blocks))
            if config.p0_fixed is None:
                probs = np.concatenate([blk.last_p for blk in blocks]) if blocks else np.zeros(0)
                p0 = update_p0(probs, config.p0_prior, rng_p0)
            if keep:
                p0_draws[t - config.burn_in] = p0
    finally:
        if pool is not None:
            pool.shutdown()

    T = config.iterations

    def cat(name, shape):
        parts = [getattr(blk, name) for blk in blocks]
        return np.concatenate(parts) if parts else np.zeros(shape)

    post = cat("sum_p", (0,)) / T
    log_odds = cat("lse_p", (0,)) - cat("lse_q", (0,))
    return ScreeningResult(
        post_h0=np.clip(post, 0.0, 1.0),
        log_odds=log_odds,
        p0_draws=p0_draws,
        mean_weights0=cat("sum_w0", (0, K)) / T,
        mean_weights1=cat("sum_w1", (0, K)) / T,
        site_ids=dataset.site_ids,
    )


def permute_groups(group, rng):
    """A uniformly random relabelling that keeps both group sizes."""
    return rng.permutation(np.asarray(group))


def permutation_null(dataset: ScreeningDataset, dictionary: KernelDictionary,
                     config: GibbsConfig, n_perm: int, rng):
    """Re-run :func:`screen` under ``n_perm`` random relabellings of the groups.

    Every run reuses ``config`` (and so its seed); only the labels change.
    Returns ``(permutations, post_h0)`` with shapes ``(n_perm, N)`` and
    ``(n_perm, M)``.
    """
    if n_perm < 1:
        raise ValueError("n_perm must be at least 1")
    perms = np.stack([rng.permutation(dataset.n_subjects) for _ in range(n_perm)])
    out = np.empty((n_perm, dataset.n_sites))
    for i, perm in enumerate(perms):
        out[i] = screen(dataset.with_group(dataset.group[perm]), dictionary, config).post_h0
    return perms, out


def log_mean_exp(x, axis=None):
    x = np.asarray(x, dtype=float)
    n = x.size if axis is None else x.shape[axis]
    return special.logsumexp(x, axis=axis) - np.log(n)
