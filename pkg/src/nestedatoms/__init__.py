"""Nested atoms mixture models with truncated variational inference."""

from .cavi import CaviConfig, RestartSummary, compute_elbo, fit, fit_restarts
from .core import (
    CAM,
    NAM,
    FitResult,
    Hyperparameters,
    NestedDataset,
    VariationalState,
    extract_assignments,
)
from .errors import (
    ConfigError,
    DataFormatError,
    NestedAtomsError,
    NotSpdError,
    NumericalFault,
)
from .metrics import (
    adjusted_rand_index,
    count_clusters,
    overall_oc_ari,
    per_group_oc_ari,
)
from .prior import (
    PriorSpec,
    TruncationSpec,
    coclustering_probs,
    mc_prior_estimates,
    prior_correlation,
    prior_mean,
    prior_variance,
    truncation_bound,
)
from .simulate import GroundTruth, SimScenario, simulate

__all__ = [
    "CAM",
    "NAM",
    "CaviConfig",
    "ConfigError",
    "DataFormatError",
    "FitResult",
    "GroundTruth",
    "Hyperparameters",
    "NestedAtomsError",
    "NestedDataset",
    "NotSpdError",
    "NumericalFault",
    "PriorSpec",
    "RestartSummary",
    "SimScenario",
    "TruncationSpec",
    "VariationalState",
    "adjusted_rand_index",
    "coclustering_probs",
    "compute_elbo",
    "count_clusters",
    "extract_assignments",
    "fit",
    "fit_restarts",
    "mc_prior_estimates",
    "overall_oc_ari",
    "per_group_oc_ari",
    "prior_correlation",
    "prior_mean",
    "prior_variance",
    "simulate",
    "truncation_bound",
]

__version__ = "0.1.0"
