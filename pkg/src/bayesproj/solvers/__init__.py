"""Penalized and constrained fitting engines that accept fitted means as the response."""
from .base import (WEIGHT_CAP, ZERO_TOL, GarottePath, GarotteSolution, HeredityGraph,
                   PenaltySpec, SolutionPath, SolverError, nonzero_set)
from .garotte import garotte_fit, garotte_path
from .glmpath import (default_delta_grid, elastic_net_at_constraint, elastic_net_fit,
                      glm_constrained_at, glm_constrained_levels, glm_lasso_path, glm_penalized_path)
from .kkt import KKTReport, kkt_check
from .lars import lasso_path_gaussian

__all__ = [
    "WEIGHT_CAP", "ZERO_TOL", "GarottePath", "GarotteSolution", "HeredityGraph", "PenaltySpec",
    "SolutionPath", "SolverError", "nonzero_set", "garotte_fit", "garotte_path",
    "default_delta_grid", "elastic_net_at_constraint", "elastic_net_fit", "glm_constrained_at", "glm_constrained_levels",
    "glm_lasso_path", "glm_penalized_path", "KKTReport", "kkt_check", "lasso_path_gaussian",
]
