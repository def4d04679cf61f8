"""Large-sample forms of the conditional Bayes factor and rate normalisations."""
from __future__ import annotations

import numpy as np

from .screening import log_bayes_factor
from .special_math import check_concentration, log_mv_beta


def _proportions(n0, n1):
    n0 = np.asarray(n0, dtype=float)
    n1 = np.asarray(n1, dtype=float)
    N0 = n0.sum(axis=-1, keepdims=True)
    N1 = n1.sum(axis=-1, keepdims=True)
    if np.any(N0 <= 0) or np.any(N1 <= 0):
        raise ValueError("both groups need at least one observation")
    N = N0 + N1
    return n0, n1, n0 / N0, n1 / N1, (n0 + n1) / N, N0 / N, N


def exact_log_odds(n0, n1, alpha, p0=0.5):
    """``log pr(H0 | C) - log pr(H1 | C)`` from the exact multivariate-beta form."""
    with np.errstate(divide="ignore"):
        return np.log(p0) - np.log1p(-p0) + log_bayes_factor(n0, n1, alpha)


def log_asymptotic_bf(n0, n1, alpha, p0=0.5, form="corrected"):
    """Large-N approximation to the conditional posterior log-odds of H0.

    ``log c + (K-1)/2 log N - sum_k (n0k log r0k + n1k log r1k)`` with
    ``r_ik = p_ik / p_k``. The constant is

    ``c = P0/(1-P0) B(alpha) {l0 (1-l0) / 2pi}^((K-1)/2) prod_k p_k^(1/2-alpha_k) (r0k r1k)^(1/2-alpha_k)``

    which is what Stirling's formula gives when applied to the exact
    beta-function ratio. ``form="printed"`` reproduces the variant with
    exponent ``alpha_k + 1/2`` on ``p_k`` and no ``B(alpha)`` factor; it is
    off by a constant that does not vanish with N.

    Raises ``ValueError`` if any empirical proportion is zero.
    """
    alpha = check_concentration(alpha)
    n0, n1, p0k, p1k, pk, lam, N = _proportions(n0, n1)
    if np.any(p0k <= 0) or np.any(p1k <= 0):
        raise ValueError("asymptotic form needs every kernel occupied in both groups")
    K = alpha.size
    log_r0 = np.log(p0k) - np.log(pk)
    log_r1 = np.log(p1k) - np.log(pk)
    lam = lam[..., 0]
    N = N[..., 0]
    if form == "corrected":
        p_exp = 0.5 - alpha
        const = log_mv_beta(alpha)
    elif form == "printed":
        p_exp = alpha + 0.5
        const = 0.0
    else:
        raise ValueError("form must be 'corrected' or 'printed'")
    with np.errstate(divide="ignore"):
        prior_odds = np.log(p0) - np.log1p(-p0)
    log_c = (prior_odds + const
             + 0.5 * (K - 1) * np.log(lam * (1.0 - lam) / (2.0 * np.pi))
             + np.sum(p_exp * np.log(pk) + (0.5 - alpha) * (log_r0 + log_r1), axis=-1))
    return log_c + 0.5 * (K - 1) * np.log(N) - np.sum(n0 * log_r0 + n1 * log_r1, axis=-1)


def normalized_bf_h0(log_bf, K: int):
    """``2/(K-1) * log BF``: grows like ``log N`` under H0."""
    if K < 2:
        raise ValueError("normalisation undefined for K < 2")
    return 2.0 / (K - 1) * np.asarray(log_bf, dtype=float)


def _xlogy_ratio(p, q):
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)


def h1_rate(pi0, pi1, lambda0) -> float:
    """``sum_k l0 pi0_k log(pi0_k/pi*_k) + (1-l0) pi1_k log(pi1_k/pi*_k)``, ``pi* = l0 pi0 + (1-l0) pi1``.

    Non-negative, and zero exactly when ``pi0 == pi1``.
    """
    pi0 = np.asarray(pi0, dtype=float)
    pi1 = np.asarray(pi1, dtype=float)
    star = lambda0 * pi0 + (1.0 - lambda0) * pi1
    return float(np.sum(lambda0 * _xlogy_ratio(pi0, star) + (1.0 - lambda0) * _xlogy_ratio(pi1, star)))


def normalized_bf_h1(log_bf, pi0, pi1, lambda0):
    """``log BF / h1_rate(pi0, pi1, lambda0)``: decreases like ``-N`` under H1."""
    if np.array_equal(np.asarray(pi0, dtype=float), np.asarray(pi1, dtype=float)):
        raise ValueError("H1 normalisation undefined when the weight vectors coincide")
    rate = h1_rate(pi0, pi1, lambda0)
    if rate <= 0:
        raise ValueError("H1 normalisation undefined when the weight vectors coincide")
    return np.asarray(log_bf, dtype=float) / rate


def chi_square_statistic_h0(n0, n1, lambda0=None):
    """Per-kernel ``sqrt(l0 (1-l0)) N (p0k - p1k)^2`` as stated for the H0 limit.

    Under H0 its limit law is ``pi_k(1-pi_k)/sqrt(l0 (1-l0))`` times a
    chi-square(1) variable, not chi-square(1) itself; see
    :func:`chi_square_statistic_standardized` for the pivotal version.
    """
    n0, n1, p0k, p1k, pk, lam, N = _proportions(n0, n1)
    if lambda0 is not None:
        lam = np.asarray(lambda0, dtype=float)[..., None] if np.ndim(lambda0) else lambda0
    return np.sqrt(lam * (1.0 - lam)) * N * (p0k - p1k) ** 2


def chi_square_statistic_standardized(n0, n1):
    """Per-kernel ``l0 (1-l0) N (p0k - p1k)^2 / (p_k (1 - p_k))``, chi-square(1) under H0."""
    n0, n1, p0k, p1k, pk, lam, N = _proportions(n0, n1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return lam * (1.0 - lam) * N * (p0k - p1k) ** 2 / (pk * (1.0 - pk))


def simulate_known_counts(N: int, pi0, pi1, rng, lambda0=0.5):
    """Allocation counts for N subjects split into groups with probability ``lambda0``.

    Group sizes are Binomial(N, lambda0), redrawn until both are non-empty.
    """
    while True:
        N0 = int(rng.binomial(N, lambda0))
        if 0 < N0 < N:
            break
    return rng.multinomial(N0, pi0), rng.multinomial(N - N0, pi1)


def ols_slope(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc = x - x.mean()
    return float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))
