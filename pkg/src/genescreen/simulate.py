"""Simulation scenarios, error metrics, ROC curves and method comparisons."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .data import Dataset, make_dataset
from .engine import EstimationMode, RunConfig, run_screen
from .errors import DegenerateTruth
from .frequentist import (
    bh_adjust,
    fisher_pvalues,
    separate_bh,
    two_step_hierarchical,
    two_step_levels,
    uncorrected,
)
from .models import BinaryCounts, KernelDictionary


class ScenarioKind(str, Enum):
    GLOBAL_NULL = "null"
    BIMODAL = "bimodal"
    BETA_TAIL = "beta"
    CUSTOM_BETA = "custom-beta"

    @classmethod
    def parse(cls, value) -> "ScenarioKind":
        if isinstance(value, cls):
            return value
        aliases = {"null": cls.GLOBAL_NULL, "global-null": cls.GLOBAL_NULL,
                   "globalnull": cls.GLOBAL_NULL, "bimodal": cls.BIMODAL, "beta": cls.BETA_TAIL,
                   "beta-tail": cls.BETA_TAIL, "betatail": cls.BETA_TAIL,
                   "custom-beta": cls.CUSTOM_BETA, "custom": cls.CUSTOM_BETA}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown scenario {value!r}") from None


@dataclass(frozen=True)
class ScenarioConfig:
    """Generative settings for one simulated screen.

    ``beta_shape`` gives the Beta parameters of the gene probabilities for
    the Beta scenarios; ``BETA_TAIL`` uses ``(1, 0.2)``.
    """

    kind: ScenarioKind = ScenarioKind.BIMODAL
    n_genes: int = 1000
    markers_low: int = 2
    markers_high: int = 20
    n0: int = 100
    n1: int = 100
    null_fraction: float = 0.8
    beta_shape: tuple = (1.0, 0.2)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", ScenarioKind.parse(self.kind))
        if self.kind is ScenarioKind.BETA_TAIL:
            object.__setattr__(self, "beta_shape", (1.0, 0.2))
        if self.markers_low < 1 or self.markers_high < self.markers_low:
            raise ValueError("need 1 <= markers_low <= markers_high")
        if self.n_genes < 1 or self.n0 < 1 or self.n1 < 1:
            raise ValueError("gene count and group sizes must be positive")
        if not 0 <= self.null_fraction <= 1:
            raise ValueError("null_fraction must be a probability")
        if min(self.beta_shape) <= 0:
            raise ValueError("beta shapes must be positive")

    @property
    def name(self) -> str:
        if self.kind is ScenarioKind.CUSTOM_BETA:
            return "beta({:g},{:g})".format(*self.beta_shape)
        return self.kind.value


@dataclass
class LabeledDataset:
    dataset: Dataset
    truth_null: np.ndarray
    gene_prob: np.ndarray


def _group_labels(n0, n1):
    return np.r_[np.zeros(n0, dtype=np.int8), np.ones(n1, dtype=np.int8)]


def _gene_layout(cfg: ScenarioConfig, rng):
    sizes = rng.integers(cfg.markers_low, cfg.markers_high + 1, size=cfg.n_genes)
    if cfg.kind is ScenarioKind.GLOBAL_NULL:
        p = np.ones(cfg.n_genes)
    elif cfg.kind is ScenarioKind.BIMODAL:
        p = (rng.random(cfg.n_genes) < cfg.null_fraction).astype(np.float64)
    else:
        p = rng.beta(*cfg.beta_shape, size=cfg.n_genes)
    return sizes, p


def _ids(sizes):
    width = len(str(sizes.size))
    genes = [f"gene{g + 1:0{width}d}" for g in range(sizes.size)]
    gene_of_marker = [genes[g] for g in np.repeat(np.arange(sizes.size), sizes)]
    mwidth = len(str(int(sizes.sum())))
    markers = [f"m{i + 1:0{mwidth}d}" for i in range(int(sizes.sum()))]
    return markers, gene_of_marker


def generate_scenario(cfg: ScenarioConfig, rng=None) -> LabeledDataset:
    """Simulate binary markers for two groups.

    Per gene, a marker count uniform on ``markers_low..markers_high`` and a
    null probability set by the scenario. Each marker is null with its
    gene's probability; a null marker has one Uniform(0, 1) success
    probability for both groups, an alternative marker two independent
    ones. Draw order: gene sizes, gene probabilities, null flags, success
    probabilities, observations.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    sizes, p = _gene_layout(cfg, rng)
    gene_rows = np.repeat(np.arange(cfg.n_genes), sizes)
    m = gene_rows.size
    null = rng.random(m) < p[gene_rows]
    prob0 = rng.random(m)
    prob1 = np.where(null, prob0, rng.random(m))
    labels = _group_labels(cfg.n0, cfg.n1)
    u = rng.random((m, cfg.n0 + cfg.n1))
    thresh = np.where(labels == 1, prob1[:, None], prob0[:, None])
    values = (u < thresh).astype(np.int8)
    markers, gene_of_marker = _ids(sizes)
    ds = make_dataset(values, markers, gene_of_marker, labels, kind="binary")
    return LabeledDataset(ds, null, p)


def sample_truncnorm(mu, sigma, rng):
    """Inverse-CDF draws from Normal(mu, sigma) truncated to [0, 1]."""
    lo = ndtr(-mu / sigma)
    hi = ndtr((1.0 - mu) / sigma)
    u = lo + rng.random(np.shape(mu)) * (hi - lo)
    return np.clip(mu + sigma * ndtri(u), 0.0, 1.0)


def generate_kernel_scenario(cfg: ScenarioConfig, dictionary: KernelDictionary,
                             rng=None, chunk: int = 8192) -> LabeledDataset:
    """Simulate continuous [0, 1] markers from the shared-kernel model.

    Gene layout and null flags follow :func:`generate_scenario`. Mixing
    weights are drawn from ``Dirichlet(lambda)`` (shared by both groups
    for null markers) and every observation from its sampled kernel.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    sizes, p = _gene_layout(cfg, rng)
    gene_rows = np.repeat(np.arange(cfg.n_genes), sizes)
    m = gene_rows.size
    null = rng.random(m) < p[gene_rows]
    labels = _group_labels(cfg.n0, cfg.n1)
    n = labels.size
    values = np.empty((m, n))
    mu, sigma = dictionary.mu, dictionary.sigma
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        w0 = rng.dirichlet(dictionary.lam, size=hi - lo)
        w1 = np.where(null[lo:hi, None], w0, rng.dirichlet(dictionary.lam, size=hi - lo))
        cdf0 = np.cumsum(w0, axis=1)
        cdf1 = np.cumsum(w1, axis=1)
        u = rng.random((hi - lo, n))
        cdf = np.where(labels[None, :, None] == 1, cdf1[:, None, :], cdf0[:, None, :])
        k = np.minimum((cdf < u[..., None] * cdf[..., -1:]).sum(axis=-1),
                       dictionary.n_kernels - 1)
        values[lo:hi] = sample_truncnorm(mu[k], sigma[k], rng)
    markers, gene_of_marker = _ids(sizes)
    ds = make_dataset(values, markers, gene_of_marker, labels, kind="continuous01")
    return LabeledDataset(ds, null, p)


def expected_error(post_null, truth_null) -> float:
    """Mean posterior probability assigned to the wrong hypothesis."""
    post_null = np.asarray(post_null, dtype=np.float64)
    truth_null = np.asarray(truth_null, dtype=bool)
    if post_null.shape != truth_null.shape:
        raise ValueError("posterior and truth lengths differ")
    return float(np.mean(np.where(truth_null, 1.0 - post_null, post_null)))


def classify_posterior(post_null, threshold=0.5) -> np.ndarray:
    """True (alternative) where the posterior null probability is below ``threshold``."""
    return np.asarray(post_null) < threshold


def threshold_error(called_alternative, truth_null) -> float:
    """Fraction of markers whose call disagrees with the truth."""
    called = np.asarray(called_alternative, dtype=bool)
    truth_null = np.asarray(truth_null, dtype=bool)
    if called.shape != truth_null.shape:
        raise ValueError("decision and truth lengths differ")
    return float(np.mean(called == truth_null))


def roc_points(scores, truth_null):
    """ROC curve over all distinct score thresholds.

    ``scores`` grow with evidence for the alternative; positives are truly
    alternative markers. Tied scores enter the curve together.

    Returns
    -------
    fpr, tpr : ndarray
        Coordinates from (0, 0) to (1, 1).
    """
    scores = np.asarray(scores, dtype=np.float64)
    positive = ~np.asarray(truth_null, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateTruth("ROC needs both null and alternative markers")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    pos = positive[order]
    last_of_tie = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(pos)[last_of_tie]
    fp = (last_of_tie + 1) - tp
    fpr = np.r_[0.0, fp / n_neg]
    tpr = np.r_[0.0, tp / n_pos]
    return fpr, tpr


def auc(fpr, tpr) -> float:
    """Area under an ROC curve by the trapezoid rule."""
    fpr = np.asarray(fpr)
    tpr = np.asarray(tpr)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def permute_gene_labels(data: Dataset, rng) -> Dataset:
    """Shuffle which gene each marker maps to."""
    perm = rng.permutation(data.n_markers)
    return data.replace(gene_of_marker=tuple(data.gene_of_marker[i] for i in perm))


def permute_class_labels(data: Dataset, rng) -> Dataset:
    """Shuffle the group labels across samples, keeping gene labels."""
    perm = rng.permutation(data.n_samples)
    return data.replace(group_labels=data.group_labels[perm])


BAYES_METHODS = ("hierarchical", "separate", "joint", "simple")
FREQ_METHODS = ("two-step-fdr", "separate-fdr", "overall-fdr", "no-correction")
ALL_METHODS = BAYES_METHODS + FREQ_METHODS


@dataclass
class MethodOutcome:
    method: str
    called_alternative: np.ndarray
    scores: np.ndarray
    post_null: Optional[np.ndarray] = None
    post_null_rb: Optional[np.ndarray] = None


def evaluate_methods(labeled: LabeledDataset, methods: Sequence[str],
                     run_cfg: RunConfig, level: float = 0.05, threshold: float = 0.5):
    """Run each method on one dataset; return a list of :class:`MethodOutcome`."""
    data = labeled.dataset
    out = []
    pvals = None
    for method in methods:
        if method in BAYES_METHODS:
            res = run_screen(data, replace(run_cfg, mode=method))
            out.append(MethodOutcome(method, classify_posterior(res.post_null, threshold),
                                     1.0 - res.post_null, res.post_null, res.post_null_rb))
            continue
        if method not in FREQ_METHODS:
            raise ValueError(f"unknown method {method!r}")
        if pvals is None:
            pvals = fisher_pvalues(BinaryCounts.from_dataset(data))
        gi = data.gene_index
        if method == "two-step-fdr":
            called = two_step_hierarchical(pvals, gi, level).rejected
            scores = 1.0 - two_step_levels(pvals, gi)
        elif method == "separate-fdr":
            called = separate_bh(pvals, gi, level).rejected
            scores = 1.0 - pvals
        elif method == "overall-fdr":
            called = bh_adjust(pvals, level).rejected
            scores = 1.0 - pvals
        else:
            called = uncorrected(pvals, level).rejected
            scores = 1.0 - pvals
        out.append(MethodOutcome(method, called, scores))
    return out


@dataclass
class ComparisonRow:
    method: str
    scenario: str
    replicates: int
    threshold_error: float
    threshold_error_se: float
    expected_error: float = math.nan
    expected_error_se: float = math.nan
    expected_error_rb: float = math.nan
    expected_error_rb_se: float = math.nan
    auc: float = math.nan
    auc_se: float = math.nan
    per_replicate: dict = field(default_factory=dict, repr=False)
    roc: Optional[tuple] = field(default=None, repr=False)


def _mean_se(values):
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0 or np.all(np.isnan(values)):
        return math.nan, math.nan
    mean = float(np.mean(values))
    if values.size < 2:
        return mean, math.nan
    return mean, float(np.std(values, ddof=1) / np.sqrt(values.size))


def _one_replicate(scenario, seed_seq, methods, run_cfg, level, threshold,
                   keep_roc=False):
    data_rng = np.random.default_rng(seed_seq.spawn(2)[0])
    run_seed = int(seed_seq.generate_state(1)[0])
    labeled = generate_scenario(scenario, data_rng)
    cfg = replace(run_cfg, seed=run_seed)
    outcomes = evaluate_methods(labeled, methods, cfg, level, threshold)
    truth = labeled.truth_null
    has_roc = truth.any() and not truth.all()
    rows = {}
    for o in outcomes:
        rec = {"threshold_error": threshold_error(o.called_alternative, truth)}
        if o.post_null is not None:
            rec["expected_error"] = expected_error(o.post_null, truth)
            rec["expected_error_rb"] = expected_error(o.post_null_rb, truth)
        if has_roc:
            fpr, tpr = roc_points(o.scores, truth)
            rec["auc"] = auc(fpr, tpr)
            if keep_roc:
                rec["roc"] = (fpr, tpr)
        rows[o.method] = rec
    return rows


def run_comparison(scenario: ScenarioConfig, replicates: int = 50,
                   methods: Sequence[str] = ALL_METHODS,
                   run_cfg: Optional[RunConfig] = None, level: float = 0.05,
                   threshold: float = 0.5, workers: int = 1):
    """Replicate a scenario and tabulate per-method errors.

    Replicate ``r`` uses data and sampler seeds derived from
    ``(scenario.seed, r)``, so results are identical for any ``workers``.
    The ROC curve of the first replicate is attached to each row.

    Returns
    -------
    list of ComparisonRow
        One row per method with means and standard errors over replicates
        (standard errors are nan when ``replicates == 1``).
    """
    if replicates < 1:
        raise ValueError("need at least one replicate")
    if run_cfg is None:
        run_cfg = RunConfig()
    seeds = np.random.SeedSequence(scenario.seed).spawn(replicates)
    def job(r):
        return _one_replicate(scenario, seeds[r], methods, run_cfg, level, threshold,
                              keep_roc=(r == 0))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reps = list(pool.map(job, range(replicates)))
    else:
        reps = [job(r) for r in range(replicates)]

    table = []
    for method in methods:
        cols = {}
        for key in ("threshold_error", "expected_error", "expected_error_rb", "auc"):
            cols[key] = [r[method].get(key, math.nan) for r in reps]
        te, te_se = _mean_se(cols["threshold_error"])
        ee, ee_se = _mean_se(cols["expected_error"])
        rb, rb_se = _mean_se(cols["expected_error_rb"])
        a, a_se = _mean_se(cols["auc"])
        table.append(ComparisonRow(method, scenario.name, replicates, te, te_se,
                                   ee, ee_se, rb, rb_se, a, a_se, cols,
                                   reps[0][method].get("roc")))
    return table
