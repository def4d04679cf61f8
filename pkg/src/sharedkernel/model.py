"""Core data types shared by dictionary fitting and screening."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import special

from .special_math import TruncNormalKernel, check_concentration, trunc_normal_logpdf


class DataError(ValueError):
    """Input data violates a documented precondition."""


class ConvergenceError(RuntimeError):
    """An iterative routine ran out of iterations; ``last`` holds the last iterate."""

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


@dataclass(frozen=True, eq=False)
class ScreeningDataset:
    """``M x N`` matrix of observations in [0, 1] plus a 0/1 group label per subject."""

    values: np.ndarray
    group: np.ndarray
    site_ids: tuple = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim == 1:
            values = values[None, :]
        if values.ndim != 2:
            raise DataError("values must be a two-dimensional sites x subjects matrix")
        group = np.asarray(self.group).astype(np.int64).ravel()
        if group.shape[0] != values.shape[1]:
            raise DataError(
                f"group has {group.shape[0]} labels but values have {values.shape[1]} subjects")
        if not np.all(np.isin(group, (0, 1))):
            raise DataError("group labels must be 0 or 1")
        if values.shape[1] and (not np.any(group == 0) or not np.any(group == 1)):
            raise DataError("both groups must contain at least one subject")
        bad = ~np.isfinite(values) | (values < 0) | (values > 1)
        if np.any(bad):
            m, n = np.argwhere(bad)[0]
            raise DataError(f"value at site {m}, subject {n} is missing or outside [0, 1]")
        site_ids = tuple(str(s) for s in self.site_ids) or tuple(
            f"site{m + 1}" for m in range(values.shape[0]))
        if len(site_ids) != values.shape[0]:
            raise DataError("need one site identifier per row")
        values.setflags(write=False)
        group.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "group", group)
        object.__setattr__(self, "site_ids", site_ids)

    @property
    def n_sites(self) -> int:
        return self.values.shape[0]

    @property
    def n_subjects(self) -> int:
        return self.values.shape[1]

    @property
    def n0(self) -> int:
        return int(np.sum(self.group == 0))

    @property
    def n1(self) -> int:
        return int(np.sum(self.group == 1))

    def with_group(self, group) -> "ScreeningDataset":
        return ScreeningDataset(self.values, group, self.site_ids)

    def subset_sites(self, index) -> "ScreeningDataset":
        index = np.asarray(index)
        return ScreeningDataset(self.values[index], self.group,
                                tuple(self.site_ids[i] for i in index))

    def subset_subjects(self, index) -> "ScreeningDataset":
        index = np.asarray(index)
        return ScreeningDataset(self.values[:, index], self.group[index], self.site_ids)


def component_log_density(x, mus, sigmas):
    """``log f_k(x)`` for every kernel; the kernel axis is appended last."""
    x = np.asarray(x, dtype=float)[..., None]
    return trunc_normal_logpdf(x, np.asarray(mus, dtype=float), np.asarray(sigmas, dtype=float))


@dataclass(frozen=True, eq=False)
class KernelDictionary:
    """K truncated-normal kernels ordered by location, plus the shared Dirichlet concentration."""

    mus: np.ndarray
    sigmas: np.ndarray
    alpha: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        mus = np.atleast_1d(np.asarray(self.mus, dtype=float)).copy()
        sigmas = np.atleast_1d(np.asarray(self.sigmas, dtype=float)).copy()
        alpha = check_concentration(self.alpha).copy()
        if not (mus.shape == sigmas.shape == alpha.shape) or mus.ndim != 1:
            raise DataError("mus, sigmas and alpha must all have length K")
        if np.any(~(sigmas > 0)) or not np.all(np.isfinite(mus)) or not np.all(np.isfinite(sigmas)):
            raise DataError("kernel parameters must be finite with positive scale")
        if np.any(np.diff(mus) <= 0):
            raise DataError("kernel means must be strictly increasing")
        for a in (mus, sigmas, alpha):
            a.setflags(write=False)
        object.__setattr__(self, "mus", mus)
        object.__setattr__(self, "sigmas", sigmas)
        object.__setattr__(self, "alpha", alpha)

    @property
    def K(self) -> int:
        return self.mus.shape[0]

    @property
    def kernels(self) -> list:
        return [TruncNormalKernel(float(m), float(s)) for m, s in zip(self.mus, self.sigmas)]

    def log_density(self, x) -> np.ndarray:
        return component_log_density(x, self.mus, self.sigmas)

    def mixture_pdf(self, x, weights) -> np.ndarray:
        return np.exp(self.log_density(x)) @ np.asarray(weights, dtype=float)

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "kernels": [{"mu": float(m), "sigma": float(s)} for m, s in zip(self.mus, self.sigmas)],
            "alpha": [float(a) for a in self.alpha],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "KernelDictionary":
        try:
            kernels = doc["kernels"]
            out = cls([k["mu"] for k in kernels], [k["sigma"] for k in kernels],
                      doc["alpha"], dict(doc.get("meta", {})))
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed dictionary document: {exc}") from exc
        if "K" in doc and int(doc["K"]) != out.K:
            raise DataError(f"dictionary declares K={doc['K']} but lists {out.K} kernels")
        return out

    def digest(self) -> str:
        """SHA-256 of the kernel parameters and concentration (metadata excluded)."""
        payload = json.dumps({"mus": self.mus.tolist(), "sigmas": self.sigmas.tolist(),
                              "alpha": self.alpha.tolist()}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


def tabulate_counts(assignments, group, K: int):
    """Count kernel memberships per site, split by group.

    ``assignments`` holds 0-based kernel indices with shape ``(M, N)``.
    Returns ``(counts0, counts1)``, each ``(M, K)``.
    """
    assignments = np.asarray(assignments)
    if assignments.ndim == 1:
        assignments = assignments[None, :]
    group = np.asarray(group).ravel()
    M, N = assignments.shape
    if group.shape[0] != N:
        raise ValueError("group length must match the number of subjects")
    if M == 0:
        return np.zeros((0, K), dtype=np.int64), np.zeros((0, K), dtype=np.int64)
    if assignments.size and (assignments.min() < 0 or assignments.max() >= K):
        raise ValueError(f"kernel index out of range 0..{K - 1}")
    is1 = (group == 1)
    offset = np.arange(M)[:, None] * K
    flat = (assignments + offset)
    counts1 = np.bincount(flat[:, is1].ravel(), minlength=M * K).reshape(M, K)
    counts0 = np.bincount(flat[:, ~is1].ravel(), minlength=M * K).reshape(M, K)
    return counts0, counts1


@dataclass
class AllocationState:
    """Mutable per-chain allocation of subjects to kernels with running counts."""

    assignments: np.ndarray
    group: np.ndarray
    K: int
    counts0: Optional[np.ndarray] = None
    counts1: Optional[np.ndarray] = None

    def __post_init__(self):
        self.assignments = np.atleast_2d(np.asarray(self.assignments, dtype=np.int64)).copy()
        self.group = np.asarray(self.group, dtype=np.int64).ravel()
        self.counts0, self.counts1 = tabulate_counts(self.assignments, self.group, self.K)

    def reassign(self, m: int, n: int, k: int) -> None:
        if not 0 <= k < self.K:
            raise ValueError("kernel index out of range")
        old = self.assignments[m, n]
        counts = self.counts1 if self.group[n] == 1 else self.counts0
        counts[m, old] -= 1
        counts[m, k] += 1
        self.assignments[m, n] = k


@dataclass(frozen=True)
class GibbsConfig:
    """Settings for the two-group screening sampler.

    ``p0_fixed=None`` learns the global prior probability of no difference
    under a Beta(``p0_prior``) prior; a number in [0, 1] pins it.
    ``weight_draw`` selects the Bernoulli-indicator weight update
    (``"indicator"``) or the literal convex-combination update (``"convex"``).
    """

    iterations: int = 5000
    burn_in: int = 1000
    seed: int = 0
    p0_prior: tuple = (1.0, 1.0)
    p0_fixed: Optional[float] = None
    weight_draw: str = "indicator"
    threads: int = 1
    block_size: int = 64
    cache_bytes: int = 512 * 2**20

    def __post_init__(self):
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")
        if self.burn_in < 0:
            raise ValueError("burn_in must be non-negative")
        a, b = self.p0_prior
        if not (a > 0 and b > 0):
            raise ValueError("Beta prior parameters must be positive")
        if self.p0_fixed is not None and not 0.0 <= self.p0_fixed <= 1.0:
            raise ValueError("fixed P0 must lie in [0, 1]")
        if self.weight_draw not in ("indicator", "convex"):
            raise ValueError("weight_draw must be 'indicator' or 'convex'")
        if self.block_size <= 0 or self.threads <= 0:
            raise ValueError("block_size and threads must be positive")

    def echo(self) -> dict:
        """Settings that determine the output; the thread budget is excluded."""
        return {"iterations": self.iterations, "burn_in": self.burn_in, "seed": self.seed,
                "p0_prior": list(self.p0_prior),
                "p0": "learned" if self.p0_fixed is None else f"fixed={self.p0_fixed!r}",
                "weight_draw": self.weight_draw, "block_size": self.block_size}


@dataclass(frozen=True, eq=False)
class ScreeningResult:
    """Per-site output of the screening sampler.

    ``log_odds`` is ``log(mean p_m) - log(mean(1 - p_m))`` accumulated in
    log space, so it stays finite when ``post_h0`` rounds to 0 or 1.
    """

    post_h0: np.ndarray
    log_odds: np.ndarray
    p0_draws: np.ndarray
    mean_weights0: np.ndarray
    mean_weights1: np.ndarray
    site_ids: tuple = ()

    @property
    def p0_mean(self) -> float:
        return float(np.mean(self.p0_draws))


def sample_log_categorical(logw, rng):
    """Draw one index per row from unnormalised log weights on the last axis."""
    logw = np.asarray(logw, dtype=float)
    lse = special.logsumexp(logw, axis=-1, keepdims=True)
    if np.any(~np.isfinite(lse)):
        raise FloatingPointError("every component has zero probability for some observation")
    cum = np.cumsum(np.exp(logw - lse), axis=-1)
    u = rng.random(logw.shape[:-1])[..., None] * cum[..., -1:]
    idx = (u >= cum).sum(axis=-1)
    return np.minimum(idx, logw.shape[-1] - 1)


def dirichlet_rows(shape_params, rng):
    """One Dirichlet draw per row of ``shape_params`` (last axis = K).

    Gamma variates are generated on the log scale, ``log G(a) = log G(a + 1) +
    log(U) / a``, so tiny concentrations cannot underflow every coordinate to 0.
    """
    a = np.asarray(shape_params, dtype=float)
    if a.shape[-1] == 1:
        return np.ones_like(a)
    g = rng.standard_gamma(a + 1.0)
    u = rng.random(a.shape)
    with np.errstate(divide="ignore"):
        logg = np.log(g) + np.log(u) / a
    return np.exp(logg - special.logsumexp(logg, axis=-1, keepdims=True))


def spawn_generators(seed, n: int, *key) -> list:
    """``n`` independent generators derived from ``(seed, *key)``."""
    ss = np.random.SeedSequence([int(seed) % 2**64, *[int(k) for k in key]])
    return [np.random.default_rng(s) for s in ss.spawn(n)]


def generator(seed, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) % 2**64, *[int(k) for k in key]]))
