"""Numerical laboratory for conformal metrics on the unit disk with prescribed
Gaussian curvature ``K`` in the interior and geodesic curvature ``h`` on the
boundary, ``-Lap u = 2 K e^u`` in the disk and ``d_nu u + 2 = 2 h e^{u/2}`` on
the circle.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .bubbles import BubbleParams, bubble_energy, bubble_field, psi_field
from .curvature import CurvatureModel, check_hypotheses, perturb, phi_profile
from .diagnostics import (
    blowup_fit,
    concentration_masses,
    gauss_bonnet_residual,
    identity_residuals,
    kazdan_warner_residual,
    localization_check,
    pohozaev_residual,
)
from .functionals import B_remainder, J_functional, constraint_state, energy
from .paths import LinkingConfig, degree_of_chi_lambda, gamma_path, lambda_map, path_energy_profile
from .solver import SolveConfig, continue_in_eps, gradient_flow, morse_index, newton_solve
from .spectral import BoundaryFunction, DiskField, GridSpec

__all__ = [
    "__version__",
    "BubbleParams", "bubble_energy", "bubble_field", "psi_field",
    "CurvatureModel", "check_hypotheses", "perturb", "phi_profile",
    "blowup_fit", "concentration_masses", "gauss_bonnet_residual", "identity_residuals",
    "kazdan_warner_residual", "localization_check", "pohozaev_residual",
    "B_remainder", "J_functional", "constraint_state", "energy",
    "LinkingConfig", "degree_of_chi_lambda", "gamma_path", "lambda_map", "path_energy_profile",
    "SolveConfig", "continue_in_eps", "gradient_flow", "morse_index", "newton_solve",
    "BoundaryFunction", "DiskField", "GridSpec",
]
