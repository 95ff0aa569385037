"""Energies, first and second variations, and boundary constraint maps.

The perturbed energy is

    I_eps(u) = int_D (|grad u|^2/2 + 2 K_tilde u - 2 K_eps e^u)
             + int_{dD} (2 h_tilde u - 4 h_eps e^{u/2}),

whose critical points solve the perturbed boundary value problem described
in :mod:`diskcurv.curvature`.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .curvature import PerturbedCoefficients
from .spectral import (
    BoundaryFunction,
    DiskField,
    boundary_trace,
    grad_sq,
    gradient,
    laplacian,
    normal_deriv,
    quad_circle,
    quad_disk,
)

EXP_LIMIT = 700.0


class ExponentialRangeError(OverflowError):
    pass


def _check_range(u: DiskField):
    if not u.is_finite():
        raise ExponentialRangeError("field out of exponential range: non-finite values")
    top = float(u.values.max())
    if top > EXP_LIMIT:
        raise ExponentialRangeError(f"field out of exponential range: sup u = {top:.1f} > {EXP_LIMIT}")


def _exp(u: DiskField) -> DiskField:
    _check_range(u)
    return u.map(np.exp)


def _exp_half_trace(u: DiskField) -> BoundaryFunction:
    _check_range(u)
    return boundary_trace(u).map(lambda v: np.exp(v / 2.0))


def _dirichlet(u: DiskField, check: bool) -> float:
    return 0.5 * quad_disk(grad_sq(u, check=check))


@dataclass
class EnergyBreakdown:
    total: float
    dirichlet: float
    interior_linear: float
    interior_exp: float
    boundary_linear: float
    boundary_exp: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def energy(u: DiskField, coeffs: PerturbedCoefficients, check: bool = True) -> EnergyBreakdown:
    eu = _exp(u)
    eh = _exp_half_trace(u)
    tr = boundary_trace(u)
    parts = dict(
        dirichlet=_dirichlet(u, check),
        interior_linear=2.0 * coeffs.K_tilde * quad_disk(u),
        interior_exp=-2.0 * quad_disk(coeffs.K_eps * eu),
        boundary_linear=2.0 * coeffs.h_tilde * quad_circle(tr),
        boundary_exp=-4.0 * quad_circle(coeffs.h_eps * eh),
    )
    return EnergyBreakdown(total=sum(parts.values()), **parts)


def perturbation_T(u: DiskField, check: bool = True) -> float:
    """``int_D (|grad u|^2/2 + e^u - u)``; at least the disk area since e^t - t >= 1."""
    eu = _exp(u)
    return _dirichlet(u, check) + quad_disk(eu - u)


def J_functional(u: DiskField, hh: float, check: bool = True) -> float:
    """Constant-coefficient energy ``int_D (|grad u|^2/2 + 2 e^u) + int_{dD}(2u - 4 hh e^{u/2})``."""
    eu = _exp(u)
    eh = _exp_half_trace(u)
    return (_dirichlet(u, check) + 2.0 * quad_disk(eu)
            + quad_circle(2.0 * boundary_trace(u) - 4.0 * hh * eh))


def B_remainder(u: DiskField, coeffs: PerturbedCoefficients, hh: float) -> float:
    """Remainder ``I_eps - J_hh``, evaluated from its own closed expression:

    ``2 K_tilde int u - 2 int (K_eps + 1) e^u + 2 (h_tilde - 1) int_{dD} u
    - 4 int_{dD} (h_eps - hh) e^{u/2}``.
    """
    eu = _exp(u)
    eh = _exp_half_trace(u)
    return (2.0 * coeffs.K_tilde * quad_disk(u)
            - 2.0 * quad_disk((coeffs.K_eps + 1.0) * eu)
            + 2.0 * (coeffs.h_tilde - 1.0) * quad_circle(boundary_trace(u))
            - 4.0 * quad_circle((coeffs.h_eps - hh) * eh))


def el_residual(u: DiskField, coeffs: PerturbedCoefficients,
                check: bool = True) -> tuple[DiskField, BoundaryFunction]:
    """Strong Euler-Lagrange residuals (interior, boundary)."""
    eu = _exp(u)
    eh = _exp_half_trace(u)
    interior = -laplacian(u, check=check) + 2.0 * coeffs.K_tilde - 2.0 * coeffs.K_eps * eu
    bd = normal_deriv(u, check=check) + 2.0 * coeffs.h_tilde - 2.0 * coeffs.h_eps * eh
    return interior, bd


def residual_sup(u: DiskField, coeffs: PerturbedCoefficients, check: bool = False) -> float:
    """Sup norm of the collocated residual: interior rows and the boundary row."""
    ri, rb = el_residual(u, coeffs, check=check)
    return float(max(np.max(np.abs(ri.values[1:])), np.max(np.abs(rb.values))))


def pairing(interior: DiskField, bd: BoundaryFunction, v: DiskField) -> float:
    """``int_D interior * v + int_{dD} bd * v``."""
    return quad_disk(interior * v) + quad_circle(bd * boundary_trace(v))


def hessian_apply(u: DiskField, coeffs: PerturbedCoefficients, v: DiskField,
                  check: bool = True) -> tuple[DiskField, BoundaryFunction]:
    """Linearized operator: ``-Lap v - 2 K_eps e^u v`` and ``d_nu v - h_eps e^{u/2} v``.

    Paired with ``w`` this is the second variation
    ``int grad v . grad w - 2 int K_eps e^u v w - int_{dD} h_eps e^{u/2} v w``.
    """
    eu = _exp(u)
    eh = _exp_half_trace(u)
    interior = -laplacian(v, check=check) - 2.0 * coeffs.K_eps * eu * v
    bd = normal_deriv(v, check=check) - coeffs.h_eps * eh * boundary_trace(v)
    return interior, bd


def second_variation(u: DiskField, coeffs: PerturbedCoefficients, v: DiskField, w: DiskField,
                     check: bool = True) -> float:
    """Symmetric bilinear form of the Hessian in gradient form."""
    eu = _exp(u)
    eh = _exp_half_trace(u)
    v1, v2 = gradient(v, check=check)
    w1, w2 = gradient(w, check=check)
    return (quad_disk(v1 * w1 + v2 * w2) - 2.0 * quad_disk(coeffs.K_eps * eu * v * w)
            - quad_circle(coeffs.h_eps * eh * boundary_trace(v) * boundary_trace(w)))


@dataclass
class ConstraintState:
    A: float
    B: tuple[float, float]
    chi: tuple[float, float, float]

    def to_dict(self) -> dict:
        return {"A": self.A, "B": list(self.B), "chi": list(self.chi)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def constraint_state(u: DiskField) -> ConstraintState:
    """Boundary mass ``A = int e^{u/2}``, barycenter ``B = int x e^{u/2}`` and
    ``chi = (A - 1, B1, B2)``."""
    eh = _exp_half_trace(u)
    th = eh.theta
    A = quad_circle(eh)
    B = (quad_circle(eh * np.cos(th)), quad_circle(eh * np.sin(th)))
    return ConstraintState(A=A, B=B, chi=(A - 1.0, B[0], B[1]))


def lebedev_milin_gap(u: DiskField, check: bool = True) -> float:
    """``int_D |grad u|^2 + 4 int_{dD} u - 16 pi log( (1/2pi) int_{dD} e^{u/2} )``.

    Uses the mean-normalized boundary mass, so constants give exactly zero and
    the gap is invariant under adding constants.  Nonnegative for all ``u``.
    """
    eh = _exp_half_trace(u)
    return (2.0 * _dirichlet(u, check) + 4.0 * quad_circle(boundary_trace(u))
            - 16.0 * math.pi * math.log(quad_circle(eh) / (2.0 * math.pi)))
