"""Finite element solver for the nonlinear curl-curl problem with indefinite linear part.

Ground states of J(E) = 1/2 (mu^-1 curl E, curl E) - 1/2 (V E, E) - int F(x, E)
on a bounded domain with perfectly conducting walls, computed on lowest-order
edge elements through a Nehari-Pankov reduction and a mountain-pass search.
"""

__version__ = "0.1.0"

from .critical import (
    ConvergenceError,
    CriticalPointResult,
    DenseProblem,
    FieldProblem,
    IndefiniteProblem,
    NehariError,
    NonConcavityError,
    estimate_linking_level,
    fiber_maximize_m,
    ground_state,
    minimize_on_nehari,
    mountain_pass_cM,
    nehari_point_n,
)
from .decomposition import check_V_membership, helmholtz_project
from .fem import CoefficientField, FieldVector, MaxwellOperators, edge_space, interpolate
from .mesh import Mesh, build_cube_mesh, build_cylinder_mesh
from .nonlinearity import GammaField, NonlinearityModel, PowerTerm, check_hypotheses
from .spectrum import maxwell_eigenpairs, solve_source, spectral_split

__all__ = [
    "CoefficientField",
    "ConvergenceError",
    "CriticalPointResult",
    "DenseProblem",
    "FieldProblem",
    "FieldVector",
    "GammaField",
    "IndefiniteProblem",
    "MaxwellOperators",
    "Mesh",
    "NehariError",
    "NonConcavityError",
    "NonlinearityModel",
    "PowerTerm",
    "build_cube_mesh",
    "build_cylinder_mesh",
    "check_V_membership",
    "check_hypotheses",
    "edge_space",
    "estimate_linking_level",
    "fiber_maximize_m",
    "ground_state",
    "helmholtz_project",
    "interpolate",
    "maxwell_eigenpairs",
    "minimize_on_nehari",
    "mountain_pass_cM",
    "nehari_point_n",
    "solve_source",
    "spectral_split",
]
