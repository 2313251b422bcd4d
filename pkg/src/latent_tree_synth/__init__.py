"""Synthesis of Gaussian vectors whose joint law is a latent Gaussian tree."""

from .codebook import RateTuple, build_all_codebooks, codebook_size, scaled_rates
from .common import ResourceCapError
from .info_quantities import (
    all_rate_bounds,
    edge_corr_squared,
    layer_rate_bounds,
    mixture_mi,
    mutual_info_direct,
    mutual_info_leaf,
    uniform_sign_optimality_check,
)
from .synthesis import synthesize_batch, synthesize_one
from .transforms import insert_pseudo_nodes, normalize_for_synthesis, reorder_layers, structural_problems
from .tree_model import (
    GaussianTree,
    LayerDecomposition,
    SignAssignment,
    SignDistribution,
    TreeSpecError,
    assign_layers,
    load_tree,
    marginal_covariance,
    observable_covariance,
    parse_tree,
    validate_correlation_space,
)
from .validation import convergence_sweep, empirical_covariance, histogram_tv, sign_invariance_suite

__all__ = [name for name in dir() if not name.startswith("_")]
