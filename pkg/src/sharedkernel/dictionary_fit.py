"""Stage one: learn a shared dictionary of truncated-normal kernels.

The sampler treats every site as a single group with its own mixture
weights. Each sweep draws memberships, site weights, kernel parameters
(normal-gamma updates on untruncated pseudo-data) and the shared Dirichlet
concentration (maximum likelihood), then reorders kernels by location.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy import special

from .model import (KernelDictionary, ScreeningDataset, component_log_density,
                    dirichlet_rows, generator, sample_log_categorical)
from .special_math import check_concentration, untruncate


@dataclass(frozen=True)
class NormalGammaPrior:
    """Normal-gamma prior: ``tau ~ Gamma(a0, rate=b0)``, ``mu | tau ~ N(mu0, 1/(lambda0 tau))``."""

    mu0: float = 0.5
    lambda0: float = 1.0
    a0: float = 1.0
    b0: float = 0.5

    def __post_init__(self):
        if not (self.lambda0 > 0 and self.a0 > 0 and self.b0 > 0):
            raise ValueError("lambda0, a0 and b0 must be positive")

    def sample(self, rng, size=None):
        tau = rng.gamma(self.a0, 1.0 / self.b0, size=size)
        mu = rng.normal(self.mu0, 1.0 / np.sqrt(self.lambda0 * tau))
        return mu, tau


def normal_gamma_posterior(y, prior: NormalGammaPrior) -> NormalGammaPrior:
    """Conjugate update of ``prior`` with observations ``y``.

    ``S`` is the 1/N sample variance, so ``N * S`` is the centred sum of squares.
    """
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    if n == 0:
        return prior
    ybar = float(y.mean())
    ss = float(np.sum((y - ybar) ** 2))
    lam = prior.lambda0
    return NormalGammaPrior(
        mu0=(lam * prior.mu0 + n * ybar) / (lam + n),
        lambda0=lam + n,
        a0=prior.a0 + n / 2.0,
        b0=prior.b0 + ss / 2.0 + lam * n * (ybar - prior.mu0) ** 2 / (2.0 * (lam + n)),
    )


def _as_params(kernels):
    if isinstance(kernels, KernelDictionary):
        return kernels.mus, kernels.sigmas
    mus, sigmas = kernels
    return np.asarray(mus, dtype=float), np.asarray(sigmas, dtype=float)


def gibbs_allocate_single_group(values, kernels, weights, rng, log_lik=None):
    """Draw a kernel index (0-based) for every value.

    ``values`` is ``(M, N)`` and ``weights`` ``(M, K)``; membership
    probabilities are ``pi_mk f_k(x_mn)`` normalised in log space.
    ``kernels`` is a :class:`KernelDictionary` or a ``(mus, sigmas)`` pair.
    """
    values = np.atleast_2d(values)
    if log_lik is None:
        log_lik = component_log_density(values, *_as_params(kernels))
    with np.errstate(divide="ignore"):
        logw = np.log(np.atleast_2d(weights))[:, None, :]
    return sample_log_categorical(log_lik + logw, rng)


def draw_site_weights(counts, alpha, rng):
    """Dir(alpha + counts) draw per row of ``counts``."""
    counts = np.asarray(counts, dtype=float)
    if np.any(counts < 0):
        raise ValueError("counts must be non-negative")
    return dirichlet_rows(counts + check_concentration(alpha), rng)


# Beyond these a kernel is flat or a spike on [0, 1]; the bounds only stop
# an empty kernel's prior draw from feeding back into overflow.
MU_BOUNDS = (-10.0, 11.0)
SIGMA_BOUNDS = (1e-4, 10.0)


def update_kernel_params(values_by_kernel: Sequence, prior: NormalGammaPrior, mus, sigmas, rng):
    """Draw new ``(mus, sigmas)`` from each kernel's normal-gamma full conditional.

    Values are first mapped through the untruncated quantile of their
    truncated CDF under the current parameters. Kernels with no members
    draw from the prior. Draws are clipped to ``MU_BOUNDS`` and ``SIGMA_BOUNDS``.
    """
    mus = np.asarray(mus, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    new_mu = np.empty_like(mus)
    new_sigma = np.empty_like(sigmas)
    for k, x in enumerate(values_by_kernel):
        x = np.asarray(x, dtype=float)
        y = untruncate(x, mus[k], sigmas[k]) if x.size else x
        post = normal_gamma_posterior(y, prior)
        mu, tau = post.sample(rng)
        new_mu[k] = mu
        new_sigma[k] = 1.0 / np.sqrt(tau)
    return np.clip(new_mu, *MU_BOUNDS), np.clip(new_sigma, *SIGMA_BOUNDS)


class Relabeled(NamedTuple):
    mus: np.ndarray
    sigmas: np.ndarray
    alpha: Optional[np.ndarray]
    weights: Optional[np.ndarray]
    assignments: Optional[np.ndarray]
    order: np.ndarray


def relabel_by_mean(mus, sigmas, alpha=None, weights=None, assignments=None) -> Relabeled:
    """Reorder kernels by increasing mean (ties: smaller sigma first, then index).

    ``weights`` (last axis K) and ``assignments`` (0-based) are remapped to
    the new order.
    """
    mus = np.asarray(mus, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    order = np.lexsort((np.arange(mus.size), sigmas, mus))
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    return Relabeled(
        mus[order], sigmas[order],
        None if alpha is None else np.asarray(alpha)[order],
        None if weights is None else np.asarray(weights)[..., order],
        None if assignments is None else rank[np.asarray(assignments)],
        order,
    )


class DirichletMLE(NamedTuple):
    alpha: np.ndarray
    loglik: float
    initial_loglik: float
    iterations: int
    converged: bool


def dirichlet_loglik(alpha, mean_log) -> float:
    """Per-row Dirichlet log-likelihood given the mean log proportions."""
    alpha = np.asarray(alpha, dtype=float)
    return float(special.gammaln(alpha.sum()) - special.gammaln(alpha).sum()
                 + np.dot(alpha - 1.0, mean_log))


def _inv_digamma(y, iters=5):
    # Minka's initialisation followed by Newton steps; zeta(2, x) is the trigamma function
    x = np.where(y >= -2.22, np.exp(y) + 0.5, -1.0 / (y - special.psi(1.0)))
    for _ in range(iters):
        x = x - (special.psi(x) - y) / special.zeta(2.0, x)
    return x


def _moment_start(rows, floor):
    m1 = rows.mean(axis=0)
    m2 = (rows ** 2).mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (m1 - m2) / (m2 - m1 ** 2)
    s = s[np.isfinite(s) & (s > 0)]
    precision = float(np.median(s)) if s.size else 1.0
    return np.maximum(precision * m1, floor)


def dirichlet_mle(rows, tol=1e-8, max_iter=1000, clamp=1e-10, floor=0.01, init=None) -> DirichletMLE:
    """Maximum-likelihood Dirichlet concentration for a set of simplex points.

    Runs the fixed point ``psi(alpha_k) = psi(sum alpha) + mean log pi_k``
    from a moment-matched start (or ``init``, e.g. the previous Gibbs
    sweep's value). Each step maximises a lower bound on the
    log-likelihood, so it never decreases. Hitting ``max_iter`` returns the
    last iterate with ``converged=False`` and a warning.
    """
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[0] < 2:
        raise ValueError("dirichlet_mle needs at least two rows")
    mean_log = np.log(np.maximum(rows, clamp)).mean(axis=0)
    alpha = _moment_start(np.maximum(rows, clamp), floor) if init is None else \
        check_concentration(init).copy()
    start_ll = dirichlet_loglik(alpha, mean_log)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        new = _inv_digamma(special.psi(alpha.sum()) + mean_log)
        step = np.max(np.abs(new - alpha))
        alpha = new
        if step < tol:
            converged = True
            break
    if not converged:
        warnings.warn("dirichlet_mle did not converge; returning the last iterate", RuntimeWarning)
    return DirichletMLE(alpha, dirichlet_loglik(alpha, mean_log), start_ll, it, converged)


@dataclass(frozen=True)
class DictionaryFitConfig:
    """Settings for the stage-one sampler.

    ``alpha`` fixes the concentration instead of re-estimating it; with a
    single site the maximum-likelihood update is undefined, so it is then
    held at ``alpha`` (default 1).
    """

    iterations: int = 2000
    burn_in: int = 500
    seed: int = 0
    n_sites: int = 500
    alpha: Optional[float] = None
    threads: int = 1

    def echo(self) -> dict:
        return {"iterations": self.iterations, "burn_in": self.burn_in, "seed": self.seed,
                "n_sites": self.n_sites, "alpha": self.alpha}


@dataclass
class DictionaryFitReport:
    dictionary: KernelDictionary
    cv_table: dict = field(default_factory=dict)
    n_sites_used: int = 0
    site_index: np.ndarray = None
    mean_weights: np.ndarray = None
    chain_diagnostics: dict = field(default_factory=dict)


def batch_means_se(trace, n_batches=20) -> np.ndarray:
    """Monte Carlo standard error of the trace mean by non-overlapping batch means."""
    trace = np.asarray(trace, dtype=float)
    T = trace.shape[0]
    n_batches = max(2, min(n_batches, T // 2))
    size = T // n_batches
    means = trace[: size * n_batches].reshape(n_batches, size, *trace.shape[1:]).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(n_batches)


def initial_kernels(values, K):
    """Spread starting locations over the pooled quantiles of the data."""
    flat = np.asarray(values, dtype=float).ravel()
    mus = np.quantile(flat, (np.arange(K) + 0.5) / K)
    mus = mus + 1e-6 * np.arange(K)  # break ties in heavily repeated data
    sigmas = np.full(K, max(float(flat.std()) / K, 0.01))
    return mus, sigmas


def site_counts(assign, K):
    """Per-row kernel counts for a (M, N) matrix of 0-based indices."""
    M = assign.shape[0]
    flat = (assign + K * np.arange(M)[:, None]).ravel()
    return np.bincount(flat, minlength=M * K).reshape(M, K)


def _fit_values(values, K, prior, config, rng):
    values = np.atleast_2d(values)
    M, N = values.shape
    mus, sigmas = initial_kernels(values, K)
    weights = np.full((M, K), 1.0 / K)
    alpha = np.full(K, 1.0 if config.alpha is None else float(config.alpha))
    learn_alpha = config.alpha is None and M >= 2
    T = config.iterations
    trace_mu = np.empty((T, K))
    trace_sigma = np.empty((T, K))
    trace_alpha = np.empty((T, K))
    sum_w = np.zeros((M, K))
    flat = values.ravel()
    for t in range(config.burn_in + T):
        log_lik = component_log_density(values, mus, sigmas)
        assign = gibbs_allocate_single_group(values, None, weights, rng, log_lik=log_lik)
        counts = site_counts(assign, K)
        weights = draw_site_weights(counts, alpha, rng)
        flat_assign = assign.ravel()
        by_kernel = [flat[flat_assign == k] for k in range(K)]
        mus, sigmas = update_kernel_params(by_kernel, prior, mus, sigmas, rng)
        if learn_alpha:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                alpha = dirichlet_mle(weights, init=alpha).alpha
        rl = relabel_by_mean(mus, sigmas, alpha=alpha, weights=weights)
        mus, sigmas, alpha, weights = rl.mus, rl.sigmas, rl.alpha, rl.weights
        if t >= config.burn_in:
            i = t - config.burn_in
            trace_mu[i], trace_sigma[i], trace_alpha[i] = mus, sigmas, alpha
            sum_w += weights
    return trace_mu, trace_sigma, trace_alpha, sum_w / T


def _dictionary_from_traces(trace_mu, trace_sigma, trace_alpha, meta):
    mus = trace_mu.mean(axis=0)
    sigmas = trace_sigma.mean(axis=0)
    alpha = trace_alpha.mean(axis=0)
    rl = relabel_by_mean(mus, sigmas, alpha=alpha)
    mus = rl.mus.copy()
    # posterior means can coincide only in degenerate chains; nudge to keep the order strict
    for k in range(1, mus.size):
        if mus[k] <= mus[k - 1]:
            mus[k] = np.nextafter(mus[k - 1], np.inf)
    return KernelDictionary(mus, rl.sigmas, rl.alpha, meta), rl.order


def fit_dictionary(dataset: ScreeningDataset, K: int, prior: NormalGammaPrior = NormalGammaPrior(),
                   config: DictionaryFitConfig = DictionaryFitConfig(), chain: int = 0,
                   site_index=None) -> DictionaryFitReport:
    """Fit a K-kernel dictionary on a random subsample of sites (group labels ignored).

    Point estimates are posterior means of the location, scale and
    concentration after per-sweep relabelling.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    rng = generator(config.seed, 2, chain)
    if site_index is None:
        n_sub = min(config.n_sites, dataset.n_sites)
        site_index = np.sort(generator(config.seed, 3).choice(dataset.n_sites, n_sub, replace=False))
    values = dataset.values[site_index]
    tm, ts, ta, mean_w = _fit_values(values, K, prior, config, rng)
    meta = {"seed": config.seed, "iterations": config.iterations, "burn_in": config.burn_in}
    dictionary, order = _dictionary_from_traces(tm, ts, ta, meta)
    diag = {
        "mu_mean": tm.mean(axis=0)[order], "mu_sd": tm.std(axis=0)[order],
        "mu_mcse": batch_means_se(tm)[order],
        "sigma_mean": ts.mean(axis=0)[order], "sigma_mcse": batch_means_se(ts)[order],
        "alpha_mean": ta.mean(axis=0)[order], "alpha_mcse": batch_means_se(ta)[order],
    }
    return DictionaryFitReport(dictionary, {}, len(site_index), np.asarray(site_index),
                               mean_w[:, order], diag)


def heldout_loglik(values, dictionary: KernelDictionary, weights) -> float:
    """Mean per-observation log density of ``values`` (M x N) under site weights (M x K)."""
    log_lik = dictionary.log_density(np.atleast_2d(values))
    with np.errstate(divide="ignore"):
        lw = np.log(np.atleast_2d(weights))[:, None, :]
    return float(special.logsumexp(log_lik + lw, axis=-1).mean())


class CVResult(NamedTuple):
    cv_table: dict
    selected_k: int


def choose_k_by_cv(dataset: ScreeningDataset, k_range, folds: int = 5,
                   prior: NormalGammaPrior = NormalGammaPrior(),
                   config: DictionaryFitConfig = DictionaryFitConfig()) -> CVResult:
    """Pick K by mean held-out log-likelihood with subjects split into folds.

    Each (K, fold) fit uses its own RNG stream keyed by (seed, K, fold), so
    the table is the same whatever ``config.threads`` is.
    """
    if folds < 2:
        raise ValueError("need at least two folds")
    k_range = [int(k) for k in k_range]
    n_sub = min(config.n_sites, dataset.n_sites)
    sites = np.sort(generator(config.seed, 3).choice(dataset.n_sites, n_sub, replace=False))
    data = dataset.values[sites]
    N = data.shape[1]
    if N < folds:
        raise ValueError("fewer subjects than folds")
    fold_of = generator(config.seed, 4).permutation(np.arange(N) % folds)

    def job(args):
        K, f = args
        train = data[:, fold_of != f]
        test = data[:, fold_of == f]
        tm, ts, ta, mean_w = _fit_values(train, K, prior, config, generator(config.seed, 5, K, f))
        dictionary, order = _dictionary_from_traces(tm, ts, ta, {})
        return heldout_loglik(test, dictionary, mean_w[:, order])

    jobs = [(K, f) for K in k_range for f in range(folds)]
    if config.threads > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            scores = list(pool.map(job, jobs))
    else:
        scores = [job(j) for j in jobs]
    scores = np.asarray(scores).reshape(len(k_range), folds)
    table = {K: float(s.mean()) for K, s in zip(k_range, scores)}
    best = max(k_range, key=lambda K: (table[K], -K))
    return CVResult(table, best)
