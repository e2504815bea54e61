"""Gibbs sampling over marker null indicators and gene-level probabilities.

Each sweep first updates everything that is local to a marker (null
indicators, and for continuous data the kernel assignments and mixing
weights), then the gene-level probabilities under the chosen estimation
mode. For the hierarchical mode the gene-level update is the three-step
Dirichlet process update in :mod:`genescreen.dp`.

Reproducibility: every chain owns a generator derived from the run seed.
Marker-local updates of the kernel model are split into fixed-size blocks
and each (chain, sweep, block) triple gets its own seed-derived stream, so
results do not depend on how many worker threads process the blocks.
"""

from __future__ import annotations

import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from . import dp as dpmod
from ._kernels import assign_block
from .data import ChainSummary, DataKind, Dataset, ScreenResult
from .errors import (
    ChainDivergenceWarning,
    DataError,
    InsufficientHoldout,
    TruncationWarning,
)
from .models import (
    BinaryCounts,
    KernelDictionary,
    log_bayes_factor_binary,
    log_dm_marginal_ratio,
    null_posterior_prob,
    sample_mixture_weights,
)

CHAIN_RMS_LIMIT = 0.05
PI_TAIL_LIMIT = 1e-4


class EstimationMode(str, Enum):
    HIERARCHICAL = "hierarchical"
    SEPARATE = "separate"
    JOINT = "joint"
    SIMPLE = "simple"

    @classmethod
    def parse(cls, value) -> "EstimationMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown estimation mode {value!r}") from None


@dataclass(frozen=True)
class RunConfig:
    n_sweeps: int = 1000
    n_burnin: int = 200
    n_chains: int = 2
    seed: int = 0
    mode: EstimationMode = EstimationMode.HIERARCHICAL
    dp: dpmod.DpConfig = field(default_factory=dpmod.DpConfig)
    trace: bool = False
    threads: Optional[int] = None
    block_size: int = 4096

    def __post_init__(self):
        object.__setattr__(self, "mode", EstimationMode.parse(self.mode))
        if self.n_sweeps < 1 or not 0 <= self.n_burnin < self.n_sweeps:
            raise ValueError(
                f"need 0 <= n_burnin < n_sweeps, got {self.n_burnin} and {self.n_sweeps}")
        if self.n_chains < 1:
            raise ValueError("n_chains must be at least 1")
        if self.threads is not None and self.threads < 1:
            raise ValueError("threads must be at least 1")
        if self.block_size < 1:
            raise ValueError("block_size must be at least 1")

    def resolved_threads(self) -> int:
        return self.threads or os.cpu_count() or 1

    def to_dict(self, include_runtime=False):
        out = asdict(self)
        out["mode"] = self.mode.value
        if not include_runtime:
            out.pop("threads")
        return out


@dataclass
class GibbsState:
    """Current draw of one chain.

    ``weights*`` and ``counts*`` are only used by the kernel model; they
    hold per-marker mixing weights and kernel counts of each group.
    """

    null_indicator: np.ndarray
    gene_prob: np.ndarray
    dp: Optional[dpmod.DpPriorState] = None
    weights0: Optional[np.ndarray] = None
    weights1: Optional[np.ndarray] = None
    counts0: Optional[np.ndarray] = None
    counts1: Optional[np.ndarray] = None
    sweep: int = 0


def sample_null_indicators(state: GibbsState, log_ratio, gene_of_row,
                           rng: np.random.Generator):
    """Redraw every marker's null indicator.

    Each marker is null with probability
    ``p r / (p r + 1 - p)`` where ``p`` is its gene's probability and
    ``r = exp(log_ratio)``. Updates the state and returns the conditional
    probabilities (useful for Rao-Blackwellized averages).
    """
    cond = null_posterior_prob(state.gene_prob[gene_of_row], log_ratio)
    state.null_indicator = rng.random(cond.shape) < cond
    return cond


def update_gene_probs(state: GibbsState, gene_index, mode, cfg: dpmod.DpConfig,
                      rng: np.random.Generator) -> np.ndarray:
    """Redraw the gene-level null probabilities under ``mode``."""
    mode = EstimationMode.parse(mode)
    g = gene_index.n_genes
    if mode is EstimationMode.SIMPLE:
        state.gene_prob = np.full(g, 0.5)
        return state.gene_prob
    counts = dpmod.GeneNullCounts.from_indicators(
        state.null_indicator, gene_index.gene_of_row, g, gene_index.sizes)
    if mode is EstimationMode.HIERARCHICAL:
        state.gene_prob = dpmod.dp_update(state.dp, counts, cfg, rng)
    elif mode is EstimationMode.SEPARATE:
        state.gene_prob = rng.beta(cfg.a + counts.nulls, cfg.b + counts.sizes - counts.nulls)
    else:
        s = int(counts.nulls.sum())
        m = int(counts.sizes.sum())
        state.gene_prob = np.full(g, rng.beta(cfg.a + s, cfg.b + m - s))
    return state.gene_prob


def init_gene_probs(mode, cfg: dpmod.DpConfig, n_genes, rng):
    """Starting gene probabilities (and DP state for the hierarchical mode)."""
    mode = EstimationMode.parse(mode)
    if mode is EstimationMode.HIERARCHICAL:
        state = dpmod.init_state(cfg, n_genes, rng)
        return state.gene_probs(), state
    if mode is EstimationMode.SEPARATE:
        return rng.beta(cfg.a, cfg.b, size=n_genes), None
    if mode is EstimationMode.JOINT:
        return np.full(n_genes, rng.beta(cfg.a, cfg.b)), None
    return np.full(n_genes, 0.5), None


class _BinaryModel:
    def __init__(self, data: Dataset):
        self.log_ratio = np.asarray(log_bayes_factor_binary(BinaryCounts.from_dataset(data)))

    def init_chain(self, state, rng):
        pass

    def marker_step(self, state, gene_of_row, rng, chain, pool):
        return sample_null_indicators(state, self.log_ratio, gene_of_row, rng)


class _KernelModel:
    def __init__(self, data: Dataset, dictionary: KernelDictionary, seed: int,
                 block_size: int):
        self.values = data.values
        self.groups = np.ascontiguousarray(data.group_labels, dtype=np.int8)
        self.dictionary = dictionary
        self.seed = seed
        m = data.n_markers
        starts = range(0, m, block_size)
        self.blocks = [(lo, min(lo + block_size, m)) for lo in starts]

    def init_chain(self, state, rng):
        m = self.values.shape[0]
        k = self.dictionary.n_kernels
        lam = self.dictionary.lam
        state.weights0 = rng.dirichlet(lam, size=m)
        state.weights1 = rng.dirichlet(lam, size=m)
        state.counts0 = np.zeros((m, k), dtype=np.int64)
        state.counts1 = np.zeros((m, k), dtype=np.int64)

    def _block(self, state, p_marker, chain, b):
        lo, hi = self.blocks[b]
        ss = np.random.SeedSequence(self.seed, spawn_key=(chain, state.sweep + 1, b))
        rng = np.random.Generator(np.random.PCG64(ss))
        d = self.dictionary
        with np.errstate(divide="ignore"):
            lw0 = np.log(state.weights0[lo:hi])
            lw1 = np.log(state.weights1[lo:hi])
        n0 = state.counts0[lo:hi]
        n1 = state.counts1[lo:hi]
        u = rng.random((hi - lo, self.values.shape[1]))
        assign_block(self.values[lo:hi], self.groups, lw0, lw1, d.mu, d.sigma,
                     d.log_coef, u, n0, n1)
        log_ratio = log_dm_marginal_ratio(n0, n1, d.lam)
        cond = null_posterior_prob(p_marker[lo:hi], log_ratio)
        null = rng.random(hi - lo) < cond
        w0, w1 = sample_mixture_weights(n0, n1, d.lam, null, rng)
        state.weights0[lo:hi] = w0
        state.weights1[lo:hi] = w1
        return cond, null

    def marker_step(self, state, gene_of_row, rng, chain, pool):
        p_marker = state.gene_prob[gene_of_row]
        tasks = range(len(self.blocks))
        if pool is None:
            parts = [self._block(state, p_marker, chain, b) for b in tasks]
        else:
            parts = list(pool.map(lambda b: self._block(state, p_marker, chain, b), tasks))
        state.null_indicator = np.concatenate([p[1] for p in parts])
        return np.concatenate([p[0] for p in parts])


def _run_chain(model, data: Dataset, cfg: RunConfig, chain: int, pool):
    gene_index = data.gene_index
    gene_of_row = gene_index.gene_of_row
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(cfg.seed, spawn_key=(chain, 0))))
    mode = cfg.mode
    gene_prob, dp_state = init_gene_probs(mode, cfg.dp, gene_index.n_genes, rng)
    state = GibbsState(np.zeros(data.n_markers, dtype=bool), gene_prob, dp_state)
    model.init_chain(state, rng)

    kept = cfg.n_sweeps - cfg.n_burnin
    sum_ind = np.zeros(data.n_markers)
    sum_cond = np.zeros(data.n_markers)
    sum_gene = np.zeros(gene_index.n_genes)
    sum_tail = 0.0
    trace = None
    if cfg.trace:
        trace = {"gene_prob": np.empty((cfg.n_sweeps, gene_index.n_genes)),
                 "null_indicator": np.empty((cfg.n_sweeps, data.n_markers), dtype=bool)}
    t_marker = t_gene = 0.0
    for sweep in range(cfg.n_sweeps):
        state.sweep = sweep
        t0 = time.perf_counter()
        cond = model.marker_step(state, gene_of_row, rng, chain, pool)
        t1 = time.perf_counter()
        update_gene_probs(state, gene_index, mode, cfg.dp, rng)
        t2 = time.perf_counter()
        t_marker += t1 - t0
        t_gene += t2 - t1
        if trace is not None:
            trace["gene_prob"][sweep] = state.gene_prob
            trace["null_indicator"][sweep] = state.null_indicator
        if sweep >= cfg.n_burnin:
            sum_ind += state.null_indicator
            sum_cond += cond
            sum_gene += state.gene_prob
            if state.dp is not None:
                sum_tail += state.dp.pi[-1]
    summary = ChainSummary(sum_ind / kept, sum_cond / kept, sum_gene / kept,
                           sum_tail / kept)
    return summary, trace, {"marker_seconds": t_marker, "gene_seconds": t_gene}


def run_screen(data: Dataset, cfg: RunConfig = RunConfig(),
               dictionary: Optional[KernelDictionary] = None) -> ScreenResult:
    """Run the sampler and summarize posterior null probabilities.

    Parameters
    ----------
    data : Dataset
        Validated dataset. Continuous data need a kernel dictionary.
    cfg : RunConfig
        Sweeps, burn-in, chains, seed, estimation mode and prior settings.
    dictionary : KernelDictionary, optional
        Required iff ``data`` is continuous.

    Returns
    -------
    ScreenResult
        Chain-pooled posterior means plus per-chain summaries.
    """
    if data.kind is DataKind.CONTINUOUS:
        if dictionary is None:
            raise DataError("continuous data need a kernel dictionary")
        model = _KernelModel(data, dictionary, cfg.seed, cfg.block_size)
    else:
        if dictionary is not None:
            raise DataError("a kernel dictionary applies to continuous data only")
        model = _BinaryModel(data)

    threads = cfg.resolved_threads()
    pool = None
    if isinstance(model, _KernelModel) and threads > 1:
        pool = ThreadPoolExecutor(max_workers=threads)
    chains, traces = [], []
    timings = {"marker_seconds": 0.0, "gene_seconds": 0.0}
    start = time.perf_counter()
    try:
        for c in range(cfg.n_chains):
            summary, trace, t = _run_chain(model, data, cfg, c, pool)
            chains.append(summary)
            traces.append(trace)
            for key in timings:
                timings[key] += t[key]
    finally:
        if pool is not None:
            pool.shutdown()
    timings["total_seconds"] = time.perf_counter() - start

    gene_index = data.gene_index
    result = ScreenResult(
        post_null=np.mean([c.post_null for c in chains], axis=0),
        post_null_rb=np.mean([c.post_null_rb for c in chains], axis=0),
        gene_prob=np.mean([c.gene_prob for c in chains], axis=0),
        marker_ids=data.marker_ids,
        gene_ids=gene_index.gene_ids,
        gene_of_marker=data.gene_of_marker,
        mode=cfg.mode.value,
        n_sweeps=cfg.n_sweeps,
        n_burnin=cfg.n_burnin,
        seed=cfg.seed,
        chains=chains,
        traces=traces if cfg.trace else None,
        timings=timings,
    )
    if cfg.n_chains > 1 and result.chain_rms() > CHAIN_RMS_LIMIT:
        warnings.warn(f"chains disagree: gene_prob RMS difference {result.chain_rms():.3f}",
                      ChainDivergenceWarning, stacklevel=2)
    if cfg.mode is EstimationMode.HIERARCHICAL:
        tail = max(c.pi_tail for c in chains)
        if tail > PI_TAIL_LIMIT:
            warnings.warn(f"posterior mean of the last stick weight is {tail:.2e}; "
                          "consider a larger truncation", TruncationWarning, stacklevel=2)
    return result


def kl_bernoulli(q, p, eps=1e-12):
    """KL divergence of Bernoulli(q) from Bernoulli(p), arguments clamped to [eps, 1-eps]."""
    q = np.clip(np.asarray(q, dtype=np.float64), eps, 1 - eps)
    p = np.clip(np.asarray(p, dtype=np.float64), eps, 1 - eps)
    out = q * np.log(q / p) + (1 - q) * np.log((1 - q) / (1 - p))
    out = np.maximum(out, 0.0)
    return out if out.ndim else float(out)


def cross_validate_priors(data: Dataset, cfg: RunConfig = RunConfig(),
                          holdout_fraction: float = 0.1, rng=None, modes=None,
                          dictionary: Optional[KernelDictionary] = None,
                          direction: str = "posterior"):
    """Held-out agreement between gene priors and marker posteriors.

    A random ``holdout_fraction`` of markers is removed, gene probabilities
    are estimated from the remaining markers, and each held-out marker's
    posterior null probability from a full-data run (same mode) is compared
    with its gene's prior by :func:`kl_bernoulli`. Genes left without
    markers fall back to the base-measure mean (Joint mode keeps its shared
    probability; Simple mode is always 0.5).

    ``direction="posterior"`` computes KL(posterior || prior); ``"prior"``
    swaps the arguments.

    Returns
    -------
    dict
        Mean KL divergence per mode name.
    """
    if direction not in ("posterior", "prior"):
        raise ValueError("direction must be 'posterior' or 'prior'")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    m = data.n_markers
    n_hold = int(round(holdout_fraction * m))
    if n_hold < 1:
        raise InsufficientHoldout("no markers held out")
    if n_hold >= m:
        raise InsufficientHoldout("every marker held out; nothing left to fit")
    held = np.sort(rng.choice(m, size=n_hold, replace=False))
    keep = np.setdiff1d(np.arange(m), held)
    retained = data.subset(keep)
    held_genes = [data.gene_of_marker[i] for i in held]

    modes = [EstimationMode.parse(x) for x in (modes or list(EstimationMode))]
    out = {}
    for mode in modes:
        mcfg = replace(cfg, mode=mode)
        fit = run_screen(retained, mcfg, dictionary)
        prior_of = dict(zip(fit.gene_ids, fit.gene_prob))
        if mode is EstimationMode.SIMPLE:
            fallback = 0.5
        elif mode is EstimationMode.JOINT:
            fallback = float(fit.gene_prob[0])
        else:
            fallback = cfg.dp.base_mean
        prior = np.array([prior_of.get(g, fallback) for g in held_genes])
        full = run_screen(data, mcfg, dictionary)
        post = full.post_null[held]
        kl = kl_bernoulli(post, prior) if direction == "posterior" else kl_bernoulli(prior, post)
        out[mode.value] = float(np.mean(kl))
    return out
