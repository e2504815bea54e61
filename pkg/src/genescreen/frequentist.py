"""Frequentist comparators: Fisher's exact test and multiplicity corrections."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

# relative tolerance when comparing table probabilities to the observed one
_TIE_TOL = 1e-7


@dataclass
class PValueSet:
    """Raw and adjusted p-values for one correction regime.

    Attributes
    ----------
    p : ndarray
        Raw p-values, one per marker.
    adjusted : ndarray
        Values compared against ``level`` to decide rejection.
    rejected : ndarray of bool
    level : float
    method : str
    """

    p: np.ndarray
    adjusted: np.ndarray
    rejected: np.ndarray
    level: float
    method: str


def _log_choose(n, k):
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


@lru_cache(maxsize=4096)
def _fisher_table(n0: int, n1: int, total: int):
    """Two-sided p-value for every feasible ``s0`` given the margins."""
    lo = max(0, total - n1)
    hi = min(n0, total)
    x = np.arange(lo, hi + 1)
    logp = _log_choose(n0, x) + _log_choose(n1, total - x) - _log_choose(n0 + n1, total)
    prob = np.exp(logp - logp.max())
    order = np.argsort(prob, kind="stable")
    sorted_prob = prob[order]
    csum = np.cumsum(sorted_prob)
    # for each table, sum of all table probabilities <= its own (with tolerance)
    cut = np.searchsorted(sorted_prob, prob * (1 + _TIE_TOL), side="right")
    pvals = csum[cut - 1] / csum[-1]
    return lo, np.minimum(pvals, 1.0)


def fisher_exact_p(s0, n0, s1, n1):
    """Two-sided Fisher exact p-value for success counts in two groups.

    Sums the hypergeometric probabilities of all tables with the same
    margins whose probability does not exceed that of the observed table.
    Accepts scalars or arrays.
    """
    s0 = np.asarray(s0, dtype=np.int64)
    s1 = np.asarray(s1, dtype=np.int64)
    n0 = np.broadcast_to(np.asarray(n0, dtype=np.int64), s0.shape)
    n1 = np.broadcast_to(np.asarray(n1, dtype=np.int64), s0.shape)
    out = np.empty(s0.shape, dtype=np.float64)
    flat_out = out.reshape(-1)
    keys = np.stack([n0.ravel(), n1.ravel(), (s0 + s1).ravel()], axis=1)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    s0f = s0.ravel()
    for j, (a, b, t) in enumerate(uniq):
        lo, table = _fisher_table(int(a), int(b), int(t))
        rows = np.flatnonzero(inverse == j)
        flat_out[rows] = table[s0f[rows] - lo]
    return out if out.ndim else float(out)


def fisher_pvalues(counts):
    """Fisher p-values for a :class:`~genescreen.models.BinaryCounts`."""
    return fisher_exact_p(counts.s0, counts.n0, counts.s1, counts.n1)


def bh_adjust(p, q=0.05) -> PValueSet:
    """Benjamini-Hochberg step-up adjustment at FDR level ``q``."""
    p = np.asarray(p, dtype=np.float64)
    m = p.size
    order = np.argsort(p, kind="stable")
    ranked = p[order] * m / np.arange(1, m + 1)
    adj_sorted = np.minimum(np.minimum.accumulate(ranked[::-1])[::-1], 1.0)
    adjusted = np.empty(m)
    adjusted[order] = adj_sorted
    return PValueSet(p, adjusted, adjusted <= q, q, "bh")


def hochberg_adjust(p, alpha=0.05) -> PValueSet:
    """Hochberg step-up adjustment controlling the family-wise error rate."""
    p = np.asarray(p, dtype=np.float64)
    m = p.size
    order = np.argsort(p, kind="stable")
    ranked = p[order] * (m - np.arange(m))
    adj_sorted = np.minimum(np.minimum.accumulate(ranked[::-1])[::-1], 1.0)
    adjusted = np.empty(m)
    adjusted[order] = adj_sorted
    return PValueSet(p, adjusted, adjusted <= alpha, alpha, "hochberg")


def separate_bh(p, gene_index, q=0.05) -> PValueSet:
    """Benjamini-Hochberg applied within each gene separately."""
    p = np.asarray(p, dtype=np.float64)
    adjusted = np.empty_like(p)
    for rows in gene_index.members:
        adjusted[rows] = bh_adjust(p[rows], q).adjusted
    return PValueSet(p, adjusted, adjusted <= q, q, "separate-bh")


def gene_pvalues(p, gene_index) -> np.ndarray:
    """Gene-level p-value: Hochberg-adjusted minimum, ``min_i (M_g - i + 1) p_(i)``."""
    p = np.asarray(p, dtype=np.float64)
    return np.array([hochberg_adjust(p[rows]).adjusted.min() for rows in gene_index.members])


@dataclass
class TwoStepResult:
    rejected: np.ndarray
    gene_selected: np.ndarray
    gene_p: np.ndarray
    gene_q: np.ndarray
    within_q: np.ndarray
    level: float


def two_step_hierarchical(p, gene_index, q=0.05) -> TwoStepResult:
    """Two-stage gene-then-marker testing.

    Stage 1 combines each gene's marker p-values by the Hochberg-adjusted
    minimum and selects genes by Benjamini-Hochberg at level ``q``. With
    ``R`` of ``G`` genes selected, stage 2 applies Benjamini-Hochberg at
    level ``q R / G`` to the markers inside every selected gene.
    """
    p = np.asarray(p, dtype=np.float64)
    g = gene_index.n_genes
    gene_p = gene_pvalues(p, gene_index)
    gene_q = bh_adjust(gene_p, q).adjusted
    selected = gene_q <= q
    r = int(selected.sum())
    within = np.empty_like(p)
    for rows in gene_index.members:
        within[rows] = bh_adjust(p[rows]).adjusted
    rejected = np.zeros(p.size, dtype=bool)
    if r:
        level = q * r / g
        in_selected = selected[gene_index.gene_of_row]
        rejected = in_selected & (within <= level)
    return TwoStepResult(rejected, selected, gene_p, gene_q, within, q)


def two_step_levels(p, gene_index) -> np.ndarray:
    """Smallest level at which the two-step procedure rejects each marker.

    Rejection at level ``q`` happens iff the marker's gene has BH gene
    q-value ``<= q`` and its within-gene BH value is ``<= q R(q) / G``,
    where ``R(q)`` counts genes selected at ``q``. Markers never rejected
    at any ``q <= 1`` get 1. Used to rank markers for ROC curves.
    """
    p = np.asarray(p, dtype=np.float64)
    g = gene_index.n_genes
    gene_q = bh_adjust(gene_pvalues(p, gene_index)).adjusted
    thresholds = np.unique(gene_q)
    # R(q) is constant on [t_i, t_{i+1})
    r_at = np.searchsorted(np.sort(gene_q), thresholds, side="right")
    upper = np.append(thresholds[1:], np.inf)
    within = np.empty_like(p)
    for rows in gene_index.members:
        within[rows] = bh_adjust(p[rows]).adjusted
    own = gene_q[gene_index.gene_of_row]
    levels = np.full(p.size, np.inf)
    for t, r, nxt in zip(thresholds, r_at, upper):
        cand = np.maximum(t, within * g / r)
        ok = (own <= t) & (cand < nxt)
        levels = np.where(ok, np.minimum(levels, cand), levels)
    return np.minimum(levels, 1.0)


def uncorrected(p, alpha=0.05) -> PValueSet:
    p = np.asarray(p, dtype=np.float64)
    return PValueSet(p, p.copy(), p <= alpha, alpha, "none")
