"""Log-space special functions and truncated-normal primitives on [0, 1].

Everything here is vectorised over numpy arrays and pure, so it is safe to
call from any number of threads.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
_LOG_HALF = np.log(0.5)


def log_mv_beta(alpha):
    """Log of the multivariate beta function along the last axis.

    ``log B(alpha) = sum_k lgamma(alpha_k) - lgamma(sum_k alpha_k)``.
    Terms are sorted before summation so the result is bit-identical under
    any permutation of ``alpha``.
    """
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim == 0 or alpha.shape[-1] == 0:
        raise ValueError("alpha must have at least one entry")
    if not np.all(np.isfinite(alpha)) or np.any(alpha <= 0):
        raise ValueError("log_mv_beta requires finite, strictly positive entries")
    terms = np.sort(special.gammaln(alpha), axis=-1).sum(axis=-1)
    total = np.sort(alpha, axis=-1).sum(axis=-1)
    return terms - special.gammaln(total)


def digamma(x):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("digamma is only defined here for x > 0")
    return special.psi(x)


def trigamma(x):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("trigamma is only defined here for x > 0")
    return special.zeta(2.0, x)


def normal_cdf(x, mu=0.0, sigma=1.0):
    return special.ndtr((np.asarray(x, dtype=float) - mu) / sigma)


def normal_quantile(p, mu=0.0, sigma=1.0):
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise ValueError("quantile requires 0 < p < 1")
    return mu + sigma * special.ndtri(p)


def log_ndtr_diff(lo, hi):
    """``log(Phi(hi) - Phi(lo))`` for ``lo <= hi`` without cancellation.

    Upper-tail intervals are evaluated through the survival function so that
    e.g. ``Phi(40) - Phi(30)`` does not collapse to zero.
    """
    lo, hi = np.broadcast_arrays(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
    upper = lo > 0
    # reflect upper-tail intervals: Phi(hi) - Phi(lo) = Phi(-lo) - Phi(-hi)
    a = np.where(upper, -hi, lo)
    b = np.where(upper, -lo, hi)
    log_b = special.log_ndtr(b)
    log_a = special.log_ndtr(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = log_a - log_b
        out = log_b + np.log(-np.expm1(d))
    out = np.where(a >= b, -np.inf, out)
    return out if out.ndim else float(out)


def _standardise(mu, sigma):
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(~(sigma > 0)) or not np.all(np.isfinite(sigma)):
        raise ValueError("kernel scale must be finite and positive")
    if not np.all(np.isfinite(mu)):
        raise ValueError("kernel location must be finite")
    return mu, sigma


def trunc_normal_log_norm(mu, sigma):
    """Log probability mass of N(mu, sigma) on [0, 1]."""
    mu, sigma = _standardise(mu, sigma)
    return log_ndtr_diff(-mu / sigma, (1.0 - mu) / sigma)


def trunc_normal_logpdf(x, mu, sigma):
    """Log density of N(mu, sigma) truncated to [0, 1]; ``-inf`` outside."""
    mu, sigma = _standardise(mu, sigma)
    x = np.asarray(x, dtype=float)
    z = (x - mu) / sigma
    out = -0.5 * z * z - np.log(sigma) - _LOG_SQRT_2PI - trunc_normal_log_norm(mu, sigma)
    out = np.where((x < 0) | (x > 1), -np.inf, out)
    return out if out.ndim else float(out)


def trunc_normal_pdf(x, mu, sigma):
    return np.exp(trunc_normal_logpdf(x, mu, sigma))


def trunc_normal_logcdf(x, mu, sigma):
    mu, sigma = _standardise(mu, sigma)
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    out = log_ndtr_diff(-mu / sigma, (x - mu) / sigma) - trunc_normal_log_norm(mu, sigma)
    out = np.where(x >= 1.0, 0.0, np.minimum(out, 0.0))
    return out if out.ndim else float(out)


def trunc_normal_logsf(x, mu, sigma):
    mu, sigma = _standardise(mu, sigma)
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    out = log_ndtr_diff((x - mu) / sigma, (1.0 - mu) / sigma) - trunc_normal_log_norm(mu, sigma)
    out = np.where(x <= 0.0, 0.0, np.minimum(out, 0.0))
    return out if out.ndim else float(out)


def trunc_normal_cdf(x, mu, sigma):
    return np.exp(trunc_normal_logcdf(x, mu, sigma))


def trunc_normal_sf(x, mu, sigma):
    return np.exp(trunc_normal_logsf(x, mu, sigma))


def _trunc_normal_ppf(p, mu, sigma):
    # no domain check: p in [0, 1] maps onto [0, 1] including the endpoints
    mu, sigma = _standardise(mu, sigma)
    p = np.asarray(p, dtype=float)
    lo = -mu / sigma
    hi = (1.0 - mu) / sigma
    log_z = log_ndtr_diff(lo, hi)
    with np.errstate(divide="ignore"):
        log_p = np.log(p)
        log_q = np.log1p(-p)
        lower = np.logaddexp(special.log_ndtr(lo), log_p + log_z)
        upper = np.logaddexp(special.log_ndtr(-hi), log_q + log_z)
    use_lower = lower <= _LOG_HALF
    z = np.where(use_lower,
                 special.ndtri_exp(np.minimum(lower, 0.0)),
                 -special.ndtri_exp(np.minimum(upper, 0.0)))
    x = np.clip(mu + sigma * z, 0.0, 1.0)
    x = np.where(p <= 0, 0.0, np.where(p >= 1, 1.0, x))
    return x if x.ndim else float(x)


def trunc_normal_quantile(p, mu, sigma):
    """Inverse of :func:`trunc_normal_cdf` for ``0 < p < 1``."""
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise ValueError("quantile requires 0 < p < 1")
    return _trunc_normal_ppf(p, mu, sigma)


def trunc_normal_sample(mu, sigma, rng, size=None):
    """Draw from N(mu, sigma) truncated to [0, 1] by inverting the CDF."""
    u = rng.random(size if size is not None else np.broadcast(mu, sigma).shape)
    return _trunc_normal_ppf(u, mu, sigma)


def trunc_normal_mean(mu, sigma):
    """Closed-form mean of the truncated normal on [0, 1]."""
    mu, sigma = _standardise(mu, sigma)
    a = -mu / sigma
    b = (1.0 - mu) / sigma
    log_z = log_ndtr_diff(a, b)
    phi_a = np.exp(-0.5 * a * a - _LOG_SQRT_2PI - log_z)
    phi_b = np.exp(-0.5 * b * b - _LOG_SQRT_2PI - log_z)
    return mu + sigma * (phi_a - phi_b)


def untruncate(x, mu, sigma, floor=1e-10):
    """Map values through ``untruncated_quantile(truncated_cdf(x))``.

    The result is the value an untruncated N(mu, sigma) draw would have taken
    at the same probability level. Probability levels are kept inside
    ``[floor, 1 - floor]`` so the boundary values 0 and 1 stay finite.
    Each branch works on whichever tail is numerically small.
    """
    mu, sigma = _standardise(mu, sigma)
    x = np.asarray(x, dtype=float)
    lo, hi = np.log(floor), np.log1p(-floor)
    below = x <= mu
    log_cdf = np.clip(trunc_normal_logcdf(x, mu, sigma), lo, hi)
    log_sf = np.clip(trunc_normal_logsf(x, mu, sigma), lo, hi)
    z = np.where(below, special.ndtri_exp(log_cdf), -special.ndtri_exp(log_sf))
    return mu + sigma * z


@dataclass(frozen=True)
class TruncNormalKernel:
    """A normal kernel with location ``mu`` and scale ``sigma`` truncated to [0, 1]."""

    mu: float
    sigma: float

    def __post_init__(self):
        _standardise(self.mu, self.sigma)

    @property
    def precision(self) -> float:
        return 1.0 / self.sigma**2

    def logpdf(self, x):
        return trunc_normal_logpdf(x, self.mu, self.sigma)

    def pdf(self, x):
        return trunc_normal_pdf(x, self.mu, self.sigma)

    def cdf(self, x):
        return trunc_normal_cdf(x, self.mu, self.sigma)

    def quantile(self, p):
        return trunc_normal_quantile(p, self.mu, self.sigma)

    def mean(self) -> float:
        return float(trunc_normal_mean(self.mu, self.sigma))


def check_concentration(alpha) -> np.ndarray:
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    if alpha.ndim != 1 or alpha.size < 1:
        raise ValueError("concentration vector must be one-dimensional with K >= 1")
    if not np.all(np.isfinite(alpha)) or np.any(alpha <= 0):
        raise ValueError("concentration entries must be finite and strictly positive")
    return alpha


def log_softmax(logw, axis=-1):
    """Normalise log weights along ``axis``; rows that are all ``-inf`` stay ``nan``."""
    return logw - special.logsumexp(logw, axis=axis, keepdims=True)
