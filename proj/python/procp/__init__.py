"""Simultaneous conformal prediction sets for outcomes missing at random."""

from ._procp import (
    MaskedDataset,
    MeanModel,
    PredictionRule,
    PropensityModel,
    assign_bins,
    build_rule,
    fit_kernel,
    fit_logistic,
    fit_mean_lsq,
    generate,
    hypergeom_pmf,
    mcar_pac_quantile,
    odds_bin,
    odds_diagnostic,
    residual_scores,
    run_study,
    tv_distance,
    weighted_quantile,
)

__all__ = [
    "MaskedDataset",
    "MeanModel",
    "PredictionRule",
    "PropensityModel",
    "assign_bins",
    "build_rule",
    "fit_kernel",
    "fit_logistic",
    "fit_mean_lsq",
    "generate",
    "hypergeom_pmf",
    "mcar_pac_quantile",
    "odds_bin",
    "odds_diagnostic",
    "residual_scores",
    "run_study",
    "tv_distance",
    "weighted_quantile",
]
