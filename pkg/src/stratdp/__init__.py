"""Stratified differentially private estimation.

Private means per group recombined with known group weights, Coinpress
interval estimation, bounds on sums of log group sizes under Dirichlet
group proportions, and a stratified noisy-histogram synthesizer for
categorical tables.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .privacy import (  # noqa: E402
    BudgetKind,
    PrivacyBudget,
    RngHandle,
    compose_parallel,
    compose_sequential,
    gaussian_mechanism,
    laplace_mechanism,
    pure_dp_to_zcdp,
    zcdp_to_approx_dp,
)
from .estimation import (  # noqa: E402
    ClipConfig,
    MeanEstimateResult,
    StratifiedSample,
    group_private_means,
    private_mean,
    strat_error_bound,
    stratified_mean,
)
from .coinpress import CoinpressConfig, parity_error, pub_strat_coinpress, strat_coinpress, uvm_rec  # noqa: E402
from .datagen import DirichletParams, MixtureSpec, gaussian_mixture, sample_dirichlet  # noqa: E402
from .theory import digamma, expected_sum_log_mc, fit_dirichlet_alpha, lemma1_max, sparse_ref, thm1_bound  # noqa: E402

__all__ = [
    "BudgetKind",
    "PrivacyBudget",
    "RngHandle",
    "compose_parallel",
    "compose_sequential",
    "gaussian_mechanism",
    "laplace_mechanism",
    "pure_dp_to_zcdp",
    "zcdp_to_approx_dp",
    "ClipConfig",
    "MeanEstimateResult",
    "StratifiedSample",
    "group_private_means",
    "private_mean",
    "strat_error_bound",
    "stratified_mean",
    "CoinpressConfig",
    "parity_error",
    "pub_strat_coinpress",
    "strat_coinpress",
    "uvm_rec",
    "DirichletParams",
    "MixtureSpec",
    "gaussian_mixture",
    "sample_dirichlet",
    "digamma",
    "expected_sum_log_mc",
    "fit_dirichlet_alpha",
    "lemma1_max",
    "sparse_ref",
    "thm1_bound",
]
