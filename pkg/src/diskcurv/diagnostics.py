"""Necessary conditions on solutions (Gauss-Bonnet, Kazdan-Warner, Pohozaev),
single-point blow-up fitting, concentration measures and the localization
test on the blow-up point.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .bubbles import BubbleParams, bubble_values, phi_from_hh, resolving_grid
from .curvature import CurvatureModel, PerturbedCoefficients, perturb, phi_profile
from .expr import CONFORMAL, ROTATION, VectorField
from .functionals import _exp, _exp_half_trace, constraint_state
from .spectral import (
    DiskField,
    boundary_trace,
    gradient,
    quad_circle,
    quad_disk,
    tangential_deriv,
)

# ---------------------------------------------------------------------------
# identity residuals
# ---------------------------------------------------------------------------


@dataclass
class IdentityResiduals:
    gauss_bonnet: float
    kazdan_warner: float
    pohozaev: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"gauss_bonnet": self.gauss_bonnet, "kazdan_warner": self.kazdan_warner,
                "pohozaev": dict(self.pohozaev)}

    def as_rows(self, solution_id: str) -> list[tuple[str, str, float]]:
        rows = [(solution_id, "gauss_bonnet", self.gauss_bonnet),
                (solution_id, "kazdan_warner", self.kazdan_warner)]
        rows += [(solution_id, f"pohozaev_{k}", v) for k, v in sorted(self.pohozaev.items())]
        return rows


def residual_rows_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["solution_id", "residual_name", "value"])
    for r in rows:
        w.writerow([r[0], r[1], repr(float(r[2]))])
    return buf.getvalue()


def gauss_bonnet_sides(u: DiskField, coeffs: PerturbedCoefficients) -> tuple[float, float]:
    """``(int K_eps e^u + int_{dD} h_eps e^{u/2}, 2 pi h_tilde + pi K_tilde)``."""
    total = quad_disk(coeffs.K_eps * _exp(u)) + quad_circle(coeffs.h_eps * _exp_half_trace(u))
    return total, coeffs.gauss_bonnet_target()


def gauss_bonnet_residual(u: DiskField, coeffs: PerturbedCoefficients) -> float:
    lhs, rhs = gauss_bonnet_sides(u, coeffs)
    return abs(lhs - rhs)


def kazdan_warner_sides(u: DiskField, coeffs: PerturbedCoefficients,
                        form: str = "full") -> tuple[float, float]:
    """Boundary and interior sides of the Kazdan-Warner identity obtained from
    the conformal field ``F = (1 - x1^2 + x2^2, -2 x1 x2)``.

    ``form="full"`` evaluates every term, including those that vanish when the
    perturbation coefficients ``K_tilde`` and ``h_tilde`` are constants;
    ``form="reduced"`` drops them.
    """
    grid = u.grid
    x1 = DiskField(grid, grid.x1)
    x2 = DiskField(grid, grid.x2)
    F1, F2 = CONFORMAL(grid.x1, grid.x2)
    eu = _exp(u)
    eh = _exp_half_trace(u)
    tr = boundary_trace(u)
    bx1 = boundary_trace(x1)
    bx2 = boundary_trace(x2)
    gK1, gK2 = coeffs.grad_K_eps
    gradK_F = gK1 * F1 + gK2 * F2
    dtau_h = tangential_deriv(coeffs.h_eps)

    bd = 4.0 * bx2 * dtau_h * eh - 2.0 * (coeffs.h_tilde - 1.0) * bx1 * tr
    inner = 4.0 * coeffs.K_tilde * x1 * u + eu * gradK_F
    if form == "full":
        h_tilde_b = boundary_trace(DiskField.constant(grid, coeffs.h_tilde))
        K_tilde_f = DiskField.constant(grid, coeffs.K_tilde)
        gKt1, gKt2 = gradient(K_tilde_f, check=False)
        bd = bd - 2.0 * bx2 * tangential_deriv(h_tilde_b) * tr + 4.0 * bx1 * h_tilde_b
        inner = inner - u * (gKt1 * F1 + gKt2 * F2) - 4.0 * x1 * K_tilde_f
    elif form != "reduced":
        raise ValueError("form must be 'full' or 'reduced'")
    return quad_circle(bd), quad_disk(inner)


def kazdan_warner_residual(u: DiskField, coeffs: PerturbedCoefficients, form: str = "full") -> float:
    lhs, rhs = kazdan_warner_sides(u, coeffs, form)
    return abs(lhs - rhs)


def pohozaev_sides(u: DiskField, coeffs: PerturbedCoefficients,
                   F: VectorField = ROTATION) -> tuple[float, float]:
    """Boundary and interior sides of the Pohozaev identity for the field ``F``:

    ``int_{dD} [2 K_eps e^u F.nu + (2 h_eps e^{u/2} - 2 h_tilde) grad u.F - |grad u|^2 F.nu / 2]``
    ``= int_D [2 K_tilde grad u.F + 2 e^u (grad K_eps.F + K_eps div F)
    + DF(grad u, grad u) - div F |grad u|^2 / 2]``.
    """
    grid = u.grid
    X1, X2 = grid.x1, grid.x2
    F1, F2 = F(X1, X2)
    (d11, d12), (d21, d22) = F.jacobian(X1, X2)
    divF = F.divergence(X1, X2)
    u1, u2 = gradient(u, check=False)
    u1, u2 = u1.values, u2.values
    eu = _exp(u).values
    Ke = coeffs.K_eps.values
    gK1, gK2 = (g.values for g in coeffs.grad_K_eps)
    gu2 = u1 * u1 + u2 * u2
    uF = u1 * F1 + u2 * F2

    c, s = np.cos(grid.theta), np.sin(grid.theta)
    Fnu = F1[0] * c + F2[0] * s
    eh = np.exp(u.values[0] / 2.0)
    hb = coeffs.h_eps.values
    bd = (2.0 * Ke[0] * eu[0] * Fnu + (2.0 * hb * eh - 2.0 * coeffs.h_tilde) * uF[0]
          - 0.5 * gu2[0] * Fnu)
    DF = d11 * u1 * u1 + (d12 + d21) * u1 * u2 + d22 * u2 * u2
    inner = (2.0 * coeffs.K_tilde * uF + 2.0 * eu * (gK1 * F1 + gK2 * F2 + Ke * divF)
             + DF - 0.5 * divF * gu2)
    lhs = quad_circle(type(coeffs.h_eps).from_values(bd))
    rhs = quad_disk(DiskField(grid, inner))
    return lhs, rhs


def pohozaev_residual(u: DiskField, coeffs: PerturbedCoefficients, F: VectorField = ROTATION) -> float:
    lhs, rhs = pohozaev_sides(u, coeffs, F)
    return abs(lhs - rhs)


def identity_residuals(u: DiskField, coeffs: PerturbedCoefficients) -> IdentityResiduals:
    return IdentityResiduals(
        gauss_bonnet=gauss_bonnet_residual(u, coeffs),
        kazdan_warner=kazdan_warner_residual(u, coeffs),
        pohozaev={
            "rotation": pohozaev_residual(u, coeffs, ROTATION),
            "conformal": pohozaev_residual(u, coeffs, CONFORMAL),
        },
    )


# ---------------------------------------------------------------------------
# single-point blow-up
# ---------------------------------------------------------------------------

CONCENTRATION_SUP = 10.0
EDGE_FLAG = "concentration beyond grid resolution"


class NotConcentrated(ValueError):
    pass


@dataclass
class BlowupFit:
    """Best single-bubble description ``u = u_a + psi`` of a concentrating field.

    ``phi_hat``, ``k_hat`` and ``h_hat`` are the perturbed coefficients frozen
    at the boundary point ``p = a_fit / |a_fit|`` (``p = (1, 0)`` when the fit
    lands at the origin).
    """

    a_fit: tuple[float, float]
    phi_hat: float
    k_hat: float
    h_hat: float
    psi: DiskField
    psi_sup: float
    masses: tuple[float, float]
    nearest_boundary_point: tuple[float, float]
    dtau_phi_at_p: float
    dnu_phi_at_p: float
    dtau_phi_sup: float
    flags: list = field(default_factory=list)

    def to_dict(self, include_field: bool = False) -> dict:
        doc = {
            "a_fit": list(self.a_fit),
            "phi_hat": self.phi_hat,
            "k_hat": self.k_hat,
            "h_hat": self.h_hat,
            "psi_sup": self.psi_sup,
            "masses": {"area": self.masses[0], "length": self.masses[1]},
            "nearest_boundary_point": list(self.nearest_boundary_point),
            "dtau_phi_at_p": self.dtau_phi_at_p,
            "dnu_phi_at_p": self.dnu_phi_at_p,
            "dtau_phi_sup": self.dtau_phi_sup,
            "flags": list(self.flags),
        }
        if include_field:
            doc["psi"] = json.loads(self.psi.to_json())
        return doc

    def to_json(self, include_field: bool = False) -> str:
        return json.dumps(self.to_dict(include_field), sort_keys=True)


def _direction(a) -> tuple[float, float]:
    n = math.hypot(a[0], a[1])
    if n == 0.0:
        return (1.0, 0.0)
    return (a[0] / n, a[1] / n)


def _frozen(coeffs: PerturbedCoefficients, p) -> tuple[float, float, float]:
    """``(phi_hat, k_hat, h_hat)`` from ``K_eps`` and ``h_eps`` at the boundary point ``p``."""
    k_hat = float(coeffs.K_eps.evaluate(np.array([p[0]]), np.array([p[1]]))[0])
    h_hat = float(coeffs.h_eps.evaluate(np.array([math.atan2(p[1], p[0])]))[0])
    return phi_from_hh(h_hat, k_hat), k_hat, h_hat


def blowup_fit(u: DiskField, model: CurvatureModel, eps: float = 0.0,
               force: bool = False, step_tol: float = 1e-8) -> BlowupFit:
    """Fit ``u`` by one bubble ``u_a`` in the sup norm over collocation nodes.

    The centre starts at the boundary barycentre ``B(u)/A(u)`` (exact for a
    pure bubble, whose boundary density is a Poisson kernel), is polished by a
    least-squares fit and then by a compass search on the sup norm that stops
    once the step falls below ``step_tol``.
    """
    top = float(u.values.max())
    if top <= CONCENTRATION_SUP and not force:
        raise NotConcentrated(f"sup u = {top:.3g} <= {CONCENTRATION_SUP}; pass force=True to fit anyway")
    coeffs = perturb(model.on_grid(u.grid), eps)
    grid = u.grid
    X1, X2 = grid.x1, grid.x2
    vals = np.asarray(u.values, dtype=float)
    edge = 1.0 - 1e-6
    flags: list[str] = []

    def model_values(a):
        phi_hat, k_hat, h_hat = _frozen(coeffs, _direction(a))
        return bubble_values(BubbleParams(a=a, phi=phi_hat, k=k_hat, hh=h_hat), X1, X2)

    def sup_err(a):
        if math.hypot(a[0], a[1]) >= edge:
            return math.inf
        try:
            return float(np.max(np.abs(vals - model_values(a))))
        except ValueError:
            return math.inf

    st = constraint_state(u)
    a0 = np.array(st.B) / st.A
    n0 = np.hypot(*a0)
    if n0 >= edge:
        a0 *= (edge - 1e-9) / n0

    def lsq_res(z):
        a = (z[0], z[1])
        if math.hypot(*a) >= edge:
            return np.full(vals.size, 1e6)
        try:
            return (vals - model_values(a)).ravel()
        except ValueError:
            return np.full(vals.size, 1e6)

    sol = least_squares(lsq_res, a0, xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=200)
    a = tuple(sol.x) if sup_err(tuple(sol.x)) <= sup_err(tuple(a0)) else tuple(a0)
    best = sup_err(a)
    step = max(1e-3 * (1.0 - math.hypot(*a)), 1e-6)
    while step >= step_tol:
        moved = False
        for d in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            cand = (a[0] + step * d[0], a[1] + step * d[1])
            e = sup_err(cand)
            if e < best:
                a, best, moved = cand, e, True
                break
        if not moved:
            step *= 0.5
    if math.hypot(*a) >= edge - 1e-9:
        flags.append(EDGE_FLAG)

    p = _direction(a)
    phi_hat, k_hat, h_hat = _frozen(coeffs, p)
    ua = bubble_values(BubbleParams(a=a, phi=phi_hat, k=k_hat, hh=h_hat), X1, X2)
    psi = DiskField(grid, vals - ua)
    masses = (quad_disk(_exp(u)), quad_circle(_exp_half_trace(u)))

    prof = phi_profile(model.on_grid(grid))
    at = prof.at_point(p)
    ev = prof.evaluate()
    dtau_sup = float(np.nanmax(np.abs(ev["dtau_phi"]))) if np.any(ev["mask"]) else 0.0
    return BlowupFit(
        a_fit=(float(a[0]), float(a[1])),
        phi_hat=phi_hat,
        k_hat=k_hat,
        h_hat=h_hat,
        psi=psi,
        psi_sup=float(np.max(np.abs(psi.values))),
        masses=masses,
        nearest_boundary_point=p,
        dtau_phi_at_p=at["dtau_phi"],
        dnu_phi_at_p=at["dnu_phi"],
        dtau_phi_sup=dtau_sup,
        flags=flags,
    )


@dataclass
class ConcentrationMasses:
    total_interior: float
    total_boundary: float
    peak_fraction: float
    predicted: tuple[float, float]
    point: tuple[float, float]
    arc: float

    def to_dict(self) -> dict:
        return {"total_interior": self.total_interior, "total_boundary": self.total_boundary,
                "peak_fraction": self.peak_fraction,
                "predicted": {"interior": self.predicted[0], "boundary": self.predicted[1]},
                "point": list(self.point), "arc": self.arc}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def arc_integral(f, center: float, half_width: float) -> float:
    """``int_{|theta - center| < half_width} f`` computed termwise from the
    Fourier series of ``f`` (spectrally accurate, no cutoff error at the nodes)."""
    c = f.coeffs
    k = f.k.astype(float)
    fac = np.where((k == 0) | (k == f.n // 2), 1.0, 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(k == 0, 2.0 * half_width, 2.0 * np.sin(k * half_width) / k)
    return float(np.sum(fac * w * np.real(c * np.exp(1j * k * center))))


def concentration_masses(u: DiskField, model: CurvatureModel,
                         fit: BlowupFit | None = None) -> ConcentrationMasses:
    """Total weighted masses ``int_D K e^u`` and ``int_{dD} h e^{u/2}`` against
    the point-mass predictions ``2 pi (1 - h/sqrt(h^2+K))`` and ``2 pi h/sqrt(h^2+K)``
    at the blow-up point, plus the share of boundary mass inside the arc
    ``|theta - theta_p| < 10 (1 - |a|)``."""
    fit = fit or blowup_fit(u, model, 0.0, force=True)
    m = model.on_grid(u.grid)
    eh = _exp_half_trace(u)
    interior = quad_disk(m.K * _exp(u))
    bd = quad_circle(m.h * eh)
    p = fit.nearest_boundary_point
    ang = math.atan2(p[1], p[0])
    hp = float(m.h.evaluate(np.array([ang]))[0])
    Kp = float(m.K.evaluate(np.array([p[0]]), np.array([p[1]]))[0])
    root = math.sqrt(hp * hp + Kp)
    predicted = (2.0 * math.pi * (1.0 - hp / root), 2.0 * math.pi * hp / root)
    arc = min(10.0 * (1.0 - math.hypot(*fit.a_fit)), math.pi)
    total = quad_circle(eh)
    frac = 1.0 if arc >= math.pi else arc_integral(eh, ang, arc) / total
    return ConcentrationMasses(total_interior=interior, total_boundary=bd, peak_fraction=frac,
                               predicted=predicted, point=p, arc=arc)


@dataclass
class LocalizationVerdict:
    verdict: str
    tangential_ok: bool
    normal_ok: bool
    dtau_phi: float
    dnu_phi: float
    tolerance: float
    eps: float
    interpretation: str

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "tangential_ok": self.tangential_ok,
                "normal_ok": self.normal_ok, "dtau_phi": self.dtau_phi, "dnu_phi": self.dnu_phi,
                "tolerance": self.tolerance, "eps": self.eps, "interpretation": self.interpretation}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


DEGENERATE_DTAU = 1e-12
NORMAL_TOL = 1e-6


def localization_check(fit: BlowupFit, eps: float, rel_tol: float = 1e-3) -> LocalizationVerdict:
    """Test the two necessary conditions on a boundary blow-up point ``p``:
    ``d_tau Phi(p) = 0`` (relative tolerance ``rel_tol * sup|d_tau Phi|``) and
    ``sign(eps) * d_nu Phi(p) >= 0`` (absolute slack ``1e-6``)."""
    dt, dn = fit.dtau_phi_at_p, fit.dnu_phi_at_p
    tol = rel_tol * fit.dtau_phi_sup
    sgn = (eps > 0) - (eps < 0)
    if fit.dtau_phi_sup < DEGENERATE_DTAU:
        return LocalizationVerdict("degenerate", True, True, dt, dn, tol, eps,
                                   "d_tau Phi vanishes identically; every boundary point is critical")
    t_ok = abs(dt) <= tol
    n_ok = sgn * dn >= -NORMAL_TOL
    notes = []
    if not t_ok:
        notes.append(f"|d_tau Phi(p)| = {abs(dt):.3g} exceeds {tol:.3g}: p is not a critical point of Phi")
    if not n_ok:
        need = ">= 0" if sgn > 0 else "<= 0"
        notes.append(f"eps {'>' if sgn > 0 else '<'} 0 requires d_nu Phi(p) {need}, found {dn:.6g}: "
                     "a blow-up here would contradict the normal condition; this is the sign "
                     "that b- (for eps > 0) or b+ (for eps < 0) uses to exclude blow-up")
    if t_ok and n_ok:
        notes.append("p is a critical point of Phi with the normal sign allowed for this eps")
    return LocalizationVerdict("consistent" if t_ok and n_ok else "inconsistent",
                               t_ok, n_ok, dt, dn, tol, eps, "; ".join(notes))
