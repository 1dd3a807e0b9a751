"""Finite-difference laboratory for the anisotropic p-Laplacian evolution problem.

Solvers live in :mod:`parabolic` and :mod:`elliptic`; :mod:`verify` checks
decay, contraction and regularization estimates on their output, and
:mod:`exponents` holds the closed-form exponent algebra.
"""

__version__ = "0.1.0"

from .exponents import ExponentVector, check_admissible, decay_profile, harmonic_mean, pde_decay_profile, sobolev_critical
from .grid import Field, Grid, Trajectory, make_grid, norm
from .flux import FluxModel, verify_structure
from .parabolic import ProblemSpec, sola_solve, solve_parabolic, step_implicit
from .elliptic import EllipticSpec, solve_elliptic

__all__ = [
    "ExponentVector",
    "check_admissible",
    "decay_profile",
    "harmonic_mean",
    "pde_decay_profile",
    "sobolev_critical",
    "Field",
    "Grid",
    "Trajectory",
    "make_grid",
    "norm",
    "FluxModel",
    "verify_structure",
    "ProblemSpec",
    "sola_solve",
    "solve_parabolic",
    "step_implicit",
    "EllipticSpec",
    "solve_elliptic",
]
