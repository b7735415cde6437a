"""Certified quantitative transversality for approximately holomorphic maps."""
from .poly import PolyMap, random_polymap
from .geometry import Ball, GridSpec, default_grid
from .analysis import JetSample, Norms, evaluate_jet, c_norms, derivative_bound, truncate_to_degree
from .transversality import (
    Rejection, TransversalityCertificate, certify_transverse, margin_at,
    min_singular_value, openness_shift, right_inverse,
)
from .search import HypothesisError, SearchFailure
from .rank_one import ConstantsProfile, PerturbationResult, perturb_rank_one, perturb_rank_one_family
from .rank_m import build_bad_set, covering_budget, degree_bound, perturb_rank_m, perturb_rank_m_family
from .equivalence import equivalence_suite

__version__ = "0.1.0"
