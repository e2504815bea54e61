"""Hierarchical Bayesian association screening with gene-level priors."""

from .data import (
    ChainSummary,
    DataKind,
    Dataset,
    GeneIndex,
    ScreenResult,
    build_gene_index,
    make_dataset,
    validate_dataset,
)
from .dp import DpConfig, DpPriorState, GeneNullCounts, prior_expected_associated
from .engine import (
    EstimationMode,
    GibbsState,
    RunConfig,
    cross_validate_priors,
    kl_bernoulli,
    run_screen,
)
from .models import (
    BinaryCounts,
    KernelDictionary,
    fit_kernel_dictionary,
    log_bayes_factor_binary,
    log_dm_marginal_ratio,
    null_posterior_prob,
    truncnorm_log_density,
)

__version__ = "0.1.0"
