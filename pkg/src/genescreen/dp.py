"""Truncated stick-breaking Dirichlet process prior on gene null probabilities.

The gene-level probability ``p_g`` is the prior probability that a marker
in gene ``g`` is null. Genes are clustered onto ``H`` atoms ``theta_h``
drawn from a ``Beta(a, b)`` base measure, with stick-breaking weights
``pi_h = v_h * prod_{l<h} (1 - v_l)`` and ``v_H = 1``. The three blocked
Gibbs updates below (allocations, sticks, atoms) operate on that state
given the number of null-designated markers in each gene.

Cluster indices are 0-based throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import NumericalUnderflow

ATOM_CLAMP = 1e-12


@dataclass(frozen=True)
class DpConfig:
    """Hyperparameters of the gene-level prior.

    Parameters
    ----------
    alpha : float
        Concentration of the Dirichlet process.
    a, b : float
        Shape parameters of the Beta base measure.
    truncation : int
        Number of atoms ``H`` kept by the blocked sampler.
    """

    alpha: float = 1.0
    a: float = 1.0
    b: float = 1.0
    truncation: int = 50

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not (self.a > 0 and self.b > 0):
            raise ValueError(f"base Beta shapes must be positive, got ({self.a}, {self.b})")
        if int(self.truncation) != self.truncation or self.truncation < 1:
            raise ValueError(f"truncation must be an integer >= 1, got {self.truncation}")

    @property
    def base_mean(self) -> float:
        return self.a / (self.a + self.b)


@dataclass
class DpPriorState:
    theta: np.ndarray
    pi: np.ndarray
    v: np.ndarray
    cluster_of_gene: np.ndarray

    @property
    def truncation(self) -> int:
        return self.theta.size

    def gene_probs(self) -> np.ndarray:
        return self.theta[self.cluster_of_gene]

    def copy(self) -> "DpPriorState":
        return DpPriorState(self.theta.copy(), self.pi.copy(), self.v.copy(),
                            self.cluster_of_gene.copy())


@dataclass
class GeneNullCounts:
    """Marker count ``M_g`` and current null count ``S_g`` per gene."""

    sizes: np.ndarray
    nulls: np.ndarray

    def __post_init__(self):
        self.sizes = np.asarray(self.sizes, dtype=np.int64)
        self.nulls = np.asarray(self.nulls, dtype=np.int64)
        if self.sizes.shape != self.nulls.shape:
            raise ValueError("sizes and nulls must have the same length")
        if np.any(self.nulls < 0) or np.any(self.nulls > self.sizes):
            raise ValueError("null counts must satisfy 0 <= S_g <= M_g")

    @classmethod
    def from_indicators(cls, indicators, gene_of_row, n_genes, sizes=None):
        if sizes is None:
            sizes = np.bincount(gene_of_row, minlength=n_genes)
        nulls = np.bincount(gene_of_row, weights=indicators, minlength=n_genes)
        return cls(sizes, nulls.astype(np.int64))


def sticks_to_weights(v: np.ndarray) -> np.ndarray:
    """Stick-breaking weights from stick fractions (last fraction must be 1)."""
    v = np.asarray(v, dtype=np.float64)
    remaining = np.concatenate(([1.0], np.cumprod(1.0 - v[:-1])))
    return v * remaining


def init_state(cfg: DpConfig, n_genes: int, rng: np.random.Generator) -> DpPriorState:
    """Over-dispersed start: uniform allocations, prior sticks, base atoms."""
    h = cfg.truncation
    v = rng.beta(1.0, cfg.alpha, size=h)
    v[-1] = 1.0
    theta = np.clip(rng.beta(cfg.a, cfg.b, size=h), ATOM_CLAMP, 1 - ATOM_CLAMP)
    clusters = rng.integers(0, h, size=n_genes)
    return DpPriorState(theta, sticks_to_weights(v), v, clusters)


def allocation_log_weights(state: DpPriorState, counts: GeneNullCounts) -> np.ndarray:
    """Unnormalized log allocation probabilities, shape (G, H)."""
    with np.errstate(divide="ignore"):
        log_pi = np.log(state.pi)
    log_t = np.log(state.theta)
    log_1mt = np.log1p(-state.theta)
    s = counts.nulls[:, None].astype(np.float64)
    r = (counts.sizes - counts.nulls)[:, None].astype(np.float64)
    # 0 * log(0) must contribute 0, not nan
    lt = np.where(s > 0, s * log_t, 0.0)
    l1 = np.where(r > 0, r * log_1mt, 0.0)
    return log_pi + lt + l1


def allocate_from_uniforms(log_w: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF categorical draws, one row of ``log_w`` per uniform."""
    norm = logsumexp(log_w, axis=1, keepdims=True)
    if np.any(~np.isfinite(norm)):
        bad = int(np.flatnonzero(~np.isfinite(norm[:, 0]))[0])
        raise NumericalUnderflow(
            f"every cluster has zero probability for gene position {bad}; "
            "atoms are degenerate")
    cdf = np.cumsum(np.exp(log_w - norm), axis=1)
    idx = (cdf < (u * cdf[:, -1])[:, None]).sum(axis=1)
    return np.minimum(idx, log_w.shape[1] - 1)


def sample_allocations(state: DpPriorState, counts: GeneNullCounts,
                       rng: np.random.Generator) -> np.ndarray:
    """Draw each gene's cluster given atoms, weights and null counts.

    ``P(C_g = h)`` is proportional to
    ``pi_h * theta_h**S_g * (1 - theta_h)**(M_g - S_g)``, evaluated in log
    space. Updates ``state.cluster_of_gene`` in place and returns it.
    """
    log_w = allocation_log_weights(state, counts)
    u = rng.random(log_w.shape[0])
    state.cluster_of_gene = allocate_from_uniforms(log_w, u)
    return state.cluster_of_gene


def cluster_occupancy(cluster_of_gene: np.ndarray, truncation: int):
    """Number of genes in each cluster and in all later clusters."""
    n_h = np.bincount(cluster_of_gene, minlength=truncation)
    n_after = n_h[::-1].cumsum()[::-1] - n_h
    return n_h, n_after


def sample_stick_weights(state: DpPriorState, alpha: float,
                         rng: np.random.Generator):
    """Redraw stick fractions from their full conditionals and rebuild ``pi``.

    ``v_h ~ Beta(1 + #{C_g = h}, alpha + #{C_g > h})`` for ``h < H`` and
    ``v_H = 1``. Returns ``(v, pi)``; both are stored on ``state``.
    """
    h = state.truncation
    n_h, n_after = cluster_occupancy(state.cluster_of_gene, h)
    v = np.ones(h)
    if h > 1:
        v[:-1] = rng.beta(1.0 + n_h[:-1], alpha + n_after[:-1])
    state.v = v
    state.pi = sticks_to_weights(v)
    return state.v, state.pi


def sample_atoms(state: DpPriorState, counts: GeneNullCounts, cfg: DpConfig,
                 rng: np.random.Generator) -> np.ndarray:
    """Redraw atoms from their Beta full conditionals; return ``p_g``.

    ``theta_h ~ Beta(a + S~_h, b + M~_h - S~_h)`` with marker and null
    totals aggregated over the genes currently in cluster ``h``. Empty
    clusters draw from the base measure. Atoms are clamped away from 0
    and 1 so the allocation logarithms stay finite.
    """
    h = state.truncation
    m_tot = np.bincount(state.cluster_of_gene, weights=counts.sizes, minlength=h)
    s_tot = np.bincount(state.cluster_of_gene, weights=counts.nulls, minlength=h)
    theta = rng.beta(cfg.a + s_tot, cfg.b + m_tot - s_tot)
    state.theta = np.clip(theta, ATOM_CLAMP, 1 - ATOM_CLAMP)
    return state.gene_probs()


def dp_update(state: DpPriorState, counts: GeneNullCounts, cfg: DpConfig,
              rng: np.random.Generator) -> np.ndarray:
    """Allocations, then sticks, then atoms. Returns the new ``p_g``."""
    sample_allocations(state, counts, rng)
    sample_stick_weights(state, cfg.alpha, rng)
    return sample_atoms(state, counts, cfg, rng)


def prior_expected_associated(cfg: DpConfig, n_markers,
                              base_is_null: bool = True) -> float:
    """Prior expected number of associated (non-null) markers.

    ``n_markers`` may be a marker count or anything with ``n_markers``
    (a :class:`~genescreen.data.GeneIndex` or dataset). Uses the exact
    base-measure mean ``a / (a + b)``. With ``base_is_null`` (the
    convention of the sampler) that mean is the null probability, so the
    answer is ``M * b / (a + b)``. Setting it False reads the base measure
    as a prior on the association probability, giving ``M * a / (a + b)``;
    that is the reading under which ``a = 1, b = lam * M`` yields about
    ``1 / lam`` associated markers.
    """
    m = getattr(n_markers, "n_markers", n_markers)
    mean = cfg.base_mean
    return float(m) * ((1.0 - mean) if base_is_null else mean)
