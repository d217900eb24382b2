"""Spectral fractional Laplacian solver by quadrature over the finite element heat semigroup."""
from .errors import CflError, DomainError, NumericalError, UsageError
from .quadrature import (QuadratureSpec, RegularityMode, WeightVector, apply_quadrature, choose_truncation,
                         classify_regularity, compute_weights, gamma_fn, interpolant_eval)
from .solver import (DiscretizationParams, FractionalProblem, SolveResult, estimate_lambda_min, lift_boundary,
                     solve, solve_homogeneous, solve_nonhomogeneous, solve_spectral_quadrature)
from .spectral import DIRICHLET, NEUMANN, BoundaryCondition, Interval, UnitSquare, robin

__version__ = "0.1.0"

__all__ = [
    "CflError", "DomainError", "NumericalError", "UsageError",
    "QuadratureSpec", "RegularityMode", "WeightVector", "apply_quadrature", "choose_truncation",
    "classify_regularity", "compute_weights", "gamma_fn", "interpolant_eval",
    "DiscretizationParams", "FractionalProblem", "SolveResult", "estimate_lambda_min", "lift_boundary",
    "solve", "solve_homogeneous", "solve_nonhomogeneous", "solve_spectral_quadrature",
    "DIRICHLET", "NEUMANN", "BoundaryCondition", "Interval", "UnitSquare", "robin",
]
