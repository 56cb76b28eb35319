"""Adjusted benchmarking of organisations with random forests, out-of-resample
bootstrap uncertainty, rank distributions and stakeholder reports."""

from .bootstrap import (OutOfResampleBootstrap, ReplicateMatrix, ResidualDistribution, in_resample_replicates,
                        oor_bootstrap, pit_placement, pooled_predictive, residual_summary)
from .data import Dataset, TransformSpec, empirical_percentile, load_dataset, transform_value
from .exceptions import DataError, InsufficientReplicatesError, NumericError, PeerbenchError
from .forest import BenchmarkForest, fit_forest, oob_error, oob_predict, predict
from .importance import cluster_variables, group_importance, partial_dependence, permutation_importance
from .linear import LinearBaseline, cv_compare, fit_ols, residual_trend
from .ranking import (NormalApprox, RankApproximation, RankSummary, approx_diagnostics, mvn_sample,
                      nearest_pd, pairwise_covariance, rank_distribution, rank_uncertainty_explainers)
from .synth import Scenario, generate, oracle_piecewise_mean, oracle_rank_ci
from .tuning import ntree_curve, tune_m_try

__version__ = "0.1.0"

__all__ = [
    "BenchmarkForest", "DataError", "Dataset", "InsufficientReplicatesError", "LinearBaseline",
    "NormalApprox", "NumericError", "OutOfResampleBootstrap", "PeerbenchError", "RankApproximation",
    "RankSummary", "ReplicateMatrix", "ResidualDistribution", "Scenario", "TransformSpec",
    "approx_diagnostics", "cluster_variables", "cv_compare", "empirical_percentile", "fit_forest",
    "fit_ols", "generate", "group_importance", "in_resample_replicates", "load_dataset", "mvn_sample",
    "nearest_pd", "ntree_curve", "oob_error", "oob_predict", "oor_bootstrap", "oracle_piecewise_mean",
    "oracle_rank_ci", "pairwise_covariance", "partial_dependence", "permutation_importance",
    "pit_placement", "pooled_predictive", "predict", "rank_distribution", "rank_uncertainty_explainers",
    "residual_summary", "residual_trend", "transform_value", "tune_m_try",
]
