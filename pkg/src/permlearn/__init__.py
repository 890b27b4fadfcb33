"""Learning latent permutations with Sinkhorn normalization and Gumbel noise."""

from .errors import (
    DimensionError,
    DomainError,
    FeasibilityError,
    FormatError,
    PermlearnError,
    SizeError,
    TapeError,
    TrainingError,
)
from .gumbel import (
    KlParams,
    kl_data_processing_check,
    kl_gumbel_space,
    sample_gumbel,
    sample_gumbel_matching,
    sample_gumbel_sinkhorn,
)
from .matching import brute_force_match, hungarian
from .perm import MetricsReport, Permutation, entropy, frobenius_inner, kendall_tau, reconstruction_metrics
from .sinkhorn import SinkhornConfig, entropy_reg_objective, sinkhorn

__version__ = "0.1.0"

__all__ = [
    "DimensionError",
    "DomainError",
    "FeasibilityError",
    "FormatError",
    "KlParams",
    "MetricsReport",
    "Permutation",
    "PermlearnError",
    "SinkhornConfig",
    "SizeError",
    "TapeError",
    "TrainingError",
    "brute_force_match",
    "entropy",
    "entropy_reg_objective",
    "frobenius_inner",
    "hungarian",
    "kendall_tau",
    "kl_data_processing_check",
    "kl_gumbel_space",
    "reconstruction_metrics",
    "sample_gumbel",
    "sample_gumbel_matching",
    "sample_gumbel_sinkhorn",
    "sinkhorn",
]
