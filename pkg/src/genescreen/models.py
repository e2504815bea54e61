"""Closed-form marker evidence.

Two marker models are supported:

* binary markers, compared between groups with a beta-binomial Bayes
  factor (uniform priors on the success probabilities);
* continuous markers on [0, 1], modelled as mixtures over a fixed
  dictionary of truncated-normal kernels whose mixing weights either are
  shared by the two groups (null) or differ (alternative). Given kernel
  assignments the weights integrate out to a Dirichlet-multinomial ratio.

All log ratios are "null over alternative".
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.special import betaln, expit, gammaln, log_ndtr, ndtr

from .errors import DataError, DimensionMismatch, InsufficientData

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class BinaryCounts:
    """Success counts ``s0, s1`` out of group sizes ``n0, n1``.

    Fields may be scalars or equally shaped arrays (one entry per marker).
    """

    s0: np.ndarray
    n0: np.ndarray
    s1: np.ndarray
    n1: np.ndarray

    def __post_init__(self):
        s0, n0, s1, n1 = (np.asarray(x) for x in (self.s0, self.n0, self.s1, self.n1))
        if np.any(s0 < 0) or np.any(s1 < 0) or np.any(s0 > n0) or np.any(s1 > n1):
            raise DataError("binary counts must satisfy 0 <= s_i <= n_i")

    @classmethod
    def from_dataset(cls, dataset) -> "BinaryCounts":
        labels = dataset.group_labels.astype(bool)
        values = dataset.values
        s1 = values[:, labels].sum(axis=1, dtype=np.int64)
        s0 = values[:, ~labels].sum(axis=1, dtype=np.int64)
        n0, n1 = dataset.group_sizes
        return cls(s0, np.full_like(s0, n0), s1, np.full_like(s1, n1))

    def swapped(self) -> "BinaryCounts":
        return BinaryCounts(self.s1, self.n1, self.s0, self.n0)


def log_bayes_factor_binary(counts: BinaryCounts):
    """Log Bayes factor of "same success probability" over "different".

    ``B(1 + s0 + s1, 1 + n - s0 - s1) / (B(1 + s0, 1 + n0 - s0) B(1 + s1, 1 + n1 - s1))``
    with ``n = n0 + n1`` and ``B`` the beta function.
    """
    s0, n0, s1, n1 = (np.asarray(x, dtype=np.float64)
                      for x in (counts.s0, counts.n0, counts.s1, counts.n1))
    s = s0 + s1
    n = n0 + n1
    out = (betaln(1 + s, 1 + n - s)
           - betaln(1 + s0, 1 + n0 - s0)
           - betaln(1 + s1, 1 + n1 - s1))
    return out if out.ndim else float(out)


def log_multivariate_beta(alpha, axis=-1):
    alpha = np.asarray(alpha, dtype=np.float64)
    return gammaln(alpha).sum(axis=axis) - gammaln(alpha.sum(axis=axis))


def log_dm_marginal_ratio(n0, n1, lam):
    """Log Dirichlet-multinomial evidence ratio, null over alternative.

    ``B(lam) B(n + lam) / (B(n0 + lam) B(n1 + lam))`` where ``n = n0 + n1``
    and ``B`` is the multivariate beta function. The last axis indexes
    kernels; leading axes broadcast (one row per marker).
    """
    n0 = np.asarray(n0, dtype=np.float64)
    n1 = np.asarray(n1, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    if n0.shape[-1:] != n1.shape[-1:] or n0.shape[-1:] != lam.shape[-1:]:
        raise DimensionMismatch(
            f"kernel dimensions differ: {n0.shape[-1:]}, {n1.shape[-1:]}, {lam.shape[-1:]}")
    out = (log_multivariate_beta(lam) + log_multivariate_beta(n0 + n1 + lam)
           - log_multivariate_beta(n0 + lam) - log_multivariate_beta(n1 + lam))
    return out if np.ndim(out) else float(out)


def null_posterior_prob(p, log_ratio):
    """``p r / (p r + 1 - p)`` with ``r = exp(log_ratio)``, evaluated on the logit scale."""
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore"):
        logit = np.log(p) - np.log1p(-p) + log_ratio
    out = expit(logit)
    return out if np.ndim(out) else float(out)


def truncnorm_log_mass(mu, sigma):
    """Log probability that ``Normal(mu, sigma)`` falls in [0, 1]."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    lo = -mu / sigma
    hi = (1.0 - mu) / sigma
    # take the difference on the side of the mode that avoids cancellation
    right = lo > 0
    a = np.where(right, -hi, lo)
    b = np.where(right, -lo, hi)
    out = log_ndtr(b) + np.log1p(-np.exp(log_ndtr(a) - log_ndtr(b)))
    return out if out.ndim else float(out)


def truncnorm_log_density(x, mu, sigma):
    """Log density of ``Normal(mu, sigma)`` truncated to [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    z = (x - mu) / sigma
    out = -0.5 * z * z - _LOG_SQRT_2PI - np.log(sigma) - truncnorm_log_mass(mu, sigma)
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True, eq=False)
class KernelDictionary:
    """Fixed truncated-normal kernels plus the Dirichlet prior on their weights."""

    mu: np.ndarray
    sigma: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64).ravel()
        sigma = np.asarray(self.sigma, dtype=np.float64).ravel()
        lam = np.asarray(self.lam, dtype=np.float64).ravel()
        if not (mu.size == sigma.size == lam.size) or mu.size < 1:
            raise DimensionMismatch("mu, sigma and lambda need the same positive length")
        if np.any((mu < 0) | (mu > 1)):
            raise DataError("kernel means must lie in [0, 1]")
        if not np.all(sigma > 0) or not np.all(lam > 0):
            raise DataError("kernel scales and Dirichlet parameters must be positive")
        for name, arr in (("mu", mu), ("sigma", sigma), ("lam", lam)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_kernels(self) -> int:
        return self.mu.size

    @cached_property
    def log_coef(self) -> np.ndarray:
        """Per-kernel additive constant of the log density, precomputed once."""
        return -_LOG_SQRT_2PI - np.log(self.sigma) - truncnorm_log_mass(self.mu, self.sigma)

    def log_density(self, x) -> np.ndarray:
        """Log density of every value under every kernel, shape ``x.shape + (K,)``."""
        x = np.asarray(x, dtype=np.float64)[..., None]
        z = (x - self.mu) / self.sigma
        return -0.5 * z * z + self.log_coef

    def to_dict(self):
        return {"K": int(self.n_kernels), "mu": self.mu.tolist(),
                "sigma": self.sigma.tolist(), "lambda": self.lam.tolist()}

    @classmethod
    def from_dict(cls, doc) -> "KernelDictionary":
        try:
            out = cls(doc["mu"], doc["sigma"], doc["lambda"])
        except KeyError as exc:
            raise DataError(f"kernel dictionary lacks field {exc.args[0]!r}") from None
        if "K" in doc and int(doc["K"]) != out.n_kernels:
            raise DimensionMismatch(f"K={doc['K']} but {out.n_kernels} kernels listed")
        return out

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "KernelDictionary":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def draw_categorical_log(log_w: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw from unnormalized log weights along the last axis."""
    top = log_w.max(axis=-1, keepdims=True)
    cdf = np.cumsum(np.exp(log_w - top), axis=-1)
    idx = (cdf < (u * cdf[..., -1])[..., None]).sum(axis=-1)
    return np.minimum(idx, log_w.shape[-1] - 1)


def sample_kernel_assignments(x, groups, weights0, weights1,
                              dictionary: KernelDictionary,
                              rng: np.random.Generator):
    """Draw the kernel behind every observation of one marker.

    ``P(T_n = k)`` is proportional to ``w_k * f_k(x_n)`` where ``w`` is the
    weight vector of the sample's group and ``f_k`` the truncated-normal
    density of kernel ``k``.

    Returns
    -------
    assignments : ndarray of int, shape (N,)
        0-based kernel index per sample.
    n0, n1 : ndarray of int, shape (K,)
        Kernel counts within each group.
    """
    x = np.asarray(x, dtype=np.float64)
    groups = np.asarray(groups).astype(bool)
    k = dictionary.n_kernels
    with np.errstate(divide="ignore"):
        log_w = np.where(groups[:, None], np.log(weights1), np.log(weights0))
    log_w = log_w + dictionary.log_density(x)
    t = draw_categorical_log(log_w, rng.random(x.size))
    n0 = np.bincount(t[~groups], minlength=k)
    n1 = np.bincount(t[groups], minlength=k)
    return t, n0, n1


def sample_mixture_weights(n0, n1, lam, is_null, rng: np.random.Generator):
    """Draw group mixing weights given kernel counts.

    Null markers share one draw from ``Dirichlet(lam + n0 + n1)``;
    alternative markers get independent ``Dirichlet(lam + n_i)`` draws.
    Leading axes of the count arrays index markers, the last axis kernels.
    Random numbers are consumed identically whatever ``is_null`` holds.
    """
    n0 = np.asarray(n0, dtype=np.float64)
    n1 = np.asarray(n1, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    null = np.asarray(is_null, dtype=bool)[..., None]
    g0 = rng.standard_gamma(np.where(null, lam + n0 + n1, lam + n0))
    g1 = rng.standard_gamma(lam + n1)
    w0 = _normalize(g0)
    w1 = np.where(null, w0, _normalize(g1))
    return w0, w1


def _normalize(g):
    total = g.sum(axis=-1, keepdims=True)
    # all gammas underflowing is astronomically rare; fall back to uniform
    safe = np.where(total > 0, g / np.where(total > 0, total, 1.0), 1.0 / g.shape[-1])
    return safe


def fit_kernel_dictionary(dataset, n_kernels: int, total_mass: float = 1.0) -> KernelDictionary:
    """Fit a simple kernel dictionary to continuous data.

    Kernel means sit on the midpoint grid ``(k - 1/2) / K``. A common scale
    is the root mean square distance from every value to its nearest grid
    mean. The Dirichlet parameter is symmetric with the given total mass.
    """
    if n_kernels < 2:
        raise ValueError("need at least two kernels")
    values = np.asarray(dataset.values, dtype=np.float64)
    if np.unique(values).size < n_kernels:
        raise InsufficientData(
            f"only {np.unique(values).size} distinct values for {n_kernels} kernels")
    mu = (np.arange(n_kernels) + 0.5) / n_kernels
    # chunked to bound memory on large arrays
    sq = 0.0
    flat = values.ravel()
    for start in range(0, flat.size, 1 << 22):
        chunk = flat[start:start + (1 << 22)]
        nearest = np.clip(np.floor(chunk * n_kernels), 0, n_kernels - 1)
        resid = chunk - mu[nearest.astype(np.intp)]
        sq += float(np.dot(resid, resid))
    sigma = max(np.sqrt(sq / flat.size), 1e-3)
    return KernelDictionary(mu, np.full(n_kernels, sigma),
                            np.full(n_kernels, total_mass / n_kernels))
