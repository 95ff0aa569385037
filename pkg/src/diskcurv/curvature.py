"""Curvature data (K, h), the epsilon-perturbed coefficients, the boundary
functions Phi and D, and the existence/nonexistence hypotheses built on them.

Conventions on the unit circle: ``tau = (-x2, x1)`` so that ``d/dtau`` is
``d/dtheta``, and ``nu`` is the outward normal.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .expr import Expression
from .spectral import (
    BoundaryFunction,
    DiskField,
    GridSpec,
    boundary_trace,
    dtn,
    gradient,
    normal_deriv,
    tangential_deriv,
)

SQRT_FLOOR = 1e-12
ZERO_XTOL = 1e-10


class InvalidPerturbation(ValueError):
    pass


class PhiUndefined(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CurvatureModel:
    """Prescribed Gaussian curvature ``K`` on the disk and geodesic curvature
    ``h`` on its boundary.

    When the data come from expressions, the expressions are kept and used
    for exact gradients; otherwise gradients are spectral.
    """

    K: DiskField
    h: BoundaryFunction
    K_expr: Expression | None = None
    h_expr: Expression | None = None

    def __post_init__(self):
        if not self.K.is_finite() or not np.all(np.isfinite(self.h.values)):
            raise ValueError("curvature data must be finite")
        if self.h.n != self.K.grid.n_theta:
            raise ValueError("h must be sampled at the grid's angular resolution")

    @classmethod
    def from_expressions(cls, K, h, grid: GridSpec | None = None) -> "CurvatureModel":
        grid = grid or GridSpec()
        Ke = K if isinstance(K, Expression) else Expression.parse(str(K))
        he = h if isinstance(h, Expression) else Expression.parse(str(h))
        Kf = DiskField.from_function(grid, Ke)
        hf = BoundaryFunction.from_function(grid.n_theta, he.on_circle)
        return cls(Kf, hf, Ke, he)

    @classmethod
    def constant(cls, K: float, h: float, grid: GridSpec | None = None) -> "CurvatureModel":
        return cls.from_expressions(repr(float(K)), repr(float(h)), grid)

    @property
    def grid(self) -> GridSpec:
        return self.K.grid

    def on_grid(self, grid: GridSpec) -> "CurvatureModel":
        """Resample on another grid (exact when expressions are available)."""
        if grid == self.grid:
            return self
        if self.K_expr is not None and self.h_expr is not None:
            return CurvatureModel.from_expressions(self.K_expr, self.h_expr, grid)
        Kf = DiskField.from_function(grid, self.K.evaluate)
        hf = BoundaryFunction.from_function(grid.n_theta, self.h.evaluate)
        return CurvatureModel(Kf, hf)

    def satisfies_H(self) -> bool:
        """``K < 0`` at every collocation node."""
        return bool(np.all(self.K.values < 0.0))

    def grad_K(self) -> tuple[DiskField, DiskField]:
        if self.K_expr is not None:
            g1, g2 = self.K_expr.grad
            return DiskField.from_function(self.grid, g1), DiskField.from_function(self.grid, g2)
        return gradient(self.K, check=False)

    def K_trace(self) -> BoundaryFunction:
        return boundary_trace(self.K)

    def dnu_K(self) -> BoundaryFunction:
        if self.K_expr is not None:
            g1, g2 = self.K_expr.grad
            th = self.h.theta
            c, s = np.cos(th), np.sin(th)
            return BoundaryFunction.from_values(c * g1(c, s) + s * g2(c, s))
        return normal_deriv(self.K, check=False)

    def rotated(self, angle: float) -> "CurvatureModel":
        """Data rotated by ``angle`` about the origin (expressions dropped)."""
        return CurvatureModel(self.K.rotated(angle), self.h.rotated(angle))

    def scaled(self, c: float) -> "CurvatureModel":
        """Model of the shifted unknown ``u + c``: ``K e^{-c}``, ``h e^{-c/2}``."""
        K = self.K * math.exp(-c)
        h = self.h * math.exp(-c / 2.0)
        Ke = he = None
        if self.K_expr is not None and self.h_expr is not None:
            Ke = Expression.from_sympy(self.K_expr.sym * math.exp(-c))
            he = Expression.from_sympy(self.h_expr.sym * math.exp(-c / 2.0))
        return CurvatureModel(K, h, Ke, he)

    def to_dict(self) -> dict:
        doc = {"grid": self.grid.to_dict()}
        doc["K"] = {"expr": self.K_expr.text} if self.K_expr else {"values": self.K.values.tolist()}
        if self.h_expr:
            doc["h"] = {"expr": self.h_expr.text}
        else:
            doc["h"] = {"coeffs": [[c.real, c.imag] for c in self.h.coeffs]}
        return doc


@dataclass(frozen=True, eq=False)
class PerturbedCoefficients:
    """Coefficients of the perturbed problem

    ``-Lap u + 2 K_tilde = 2 K_eps e^u`` in the disk,
    ``d_nu u + 2 h_tilde = 2 h_eps e^{u/2}`` on the boundary.
    """

    eps: float
    K_tilde: float
    K_eps: DiskField
    h_tilde: float
    h_eps: BoundaryFunction
    grad_K_eps: tuple = field(default=None, repr=False)

    @property
    def grid(self) -> GridSpec:
        return self.K_eps.grid

    def gauss_bonnet_target(self) -> float:
        """``2 pi h_tilde + pi K_tilde``, the value of the total curvature."""
        return 2.0 * math.pi * self.h_tilde + math.pi * self.K_tilde


def perturb(model: CurvatureModel, eps: float) -> PerturbedCoefficients:
    eps = float(eps)
    if not math.isfinite(eps) or 1.0 + eps <= 0.0:
        raise InvalidPerturbation(f"invalid perturbation: need 1 + eps > 0, got eps = {eps}")
    s = 1.0 + eps
    g1, g2 = model.grad_K()
    return PerturbedCoefficients(
        eps=eps,
        K_tilde=-eps / (2.0 * s),
        K_eps=(model.K - eps / 2.0) / s,
        h_tilde=1.0 / s,
        h_eps=model.h / s,
        grad_K_eps=(g1 / s, g2 / s),
    )


# ---------------------------------------------------------------------------
# Phi and D
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PhiProfile:
    """``Phi = h + sqrt(h^2 + K)`` on the circle with its tangential and normal
    derivatives, and ``D = h / sqrt|K|``.

    Everything is assembled from smooth Fourier ingredients, so the profile
    can be evaluated at any angle; nodes where ``sqrt(h^2 + K)`` falls below
    ``1e-12`` are masked (``nan``).
    """

    h: BoundaryFunction
    K_b: BoundaryFunction
    dtau_h: BoundaryFunction
    dtau_K: BoundaryFunction
    dtn_h: BoundaryFunction
    dnu_K: BoundaryFunction

    @property
    def theta(self) -> np.ndarray:
        return self.h.theta

    @property
    def n(self) -> int:
        return self.h.n

    def _pieces(self, theta):
        if theta is None:
            return (self.h.values, self.K_b.values, self.dtau_h.values, self.dtau_K.values,
                    self.dtn_h.values, self.dnu_K.values)
        return tuple(f.evaluate(theta) for f in (self.h, self.K_b, self.dtau_h, self.dtau_K,
                                                 self.dtn_h, self.dnu_K))

    def evaluate(self, theta=None) -> dict:
        """Node values (``theta=None``) or values at arbitrary angles."""
        h, K, th, tK, dh, nK = self._pieces(theta)
        rad = h * h + K
        root = np.sqrt(np.maximum(rad, 0.0))
        mask = root >= SQRT_FLOOR
        with np.errstate(all="ignore"):
            safe = np.where(mask, root, np.nan)
            phi = h + safe
            dtau = th * (1.0 + h / safe) + tK / (2.0 * safe)
            dnu = (phi * dh + 0.5 * nK) / safe
            absK = np.abs(K)
            dee = np.where(absK > 0, h / np.sqrt(absK), np.nan)
            # |K| = -K where K < 0, so d|K| = -dK there
            dabs = np.sign(K) * tK
            dtau_dee = th / np.sqrt(absK) - h * dabs / (2.0 * absK**1.5)
        return {"phi": phi, "dtau_phi": dtau, "dnu_phi": dnu, "dee": dee,
                "dtau_dee": dtau_dee, "mask": mask}

    @property
    def mask(self) -> np.ndarray:
        return self.evaluate()["mask"]

    def _bf(self, key) -> BoundaryFunction:
        vals = self.evaluate()[key]
        if not np.all(np.isfinite(vals)):
            raise PhiUndefined(f"{key} is undefined at some boundary nodes")
        return BoundaryFunction.from_values(vals)

    @property
    def phi(self) -> BoundaryFunction:
        return self._bf("phi")

    @property
    def dtau_phi(self) -> BoundaryFunction:
        return self._bf("dtau_phi")

    @property
    def dnu_phi(self) -> BoundaryFunction:
        return self._bf("dnu_phi")

    @property
    def dee(self) -> BoundaryFunction:
        return self._bf("dee")

    def at_point(self, p) -> dict:
        """Scalar values at the boundary point in direction ``p``."""
        ang = math.atan2(float(p[1]), float(p[0]))
        vals = self.evaluate(np.array([ang]))
        return {k: float(v[0]) for k, v in vals.items()}


def phi_profile(model: CurvatureModel) -> PhiProfile:
    Kb = model.K_trace()
    prof = PhiProfile(
        h=model.h,
        K_b=Kb,
        dtau_h=tangential_deriv(model.h),
        dtau_K=tangential_deriv(Kb),
        dtn_h=dtn(model.h),
        dnu_K=model.dnu_K(),
    )
    if not prof.mask.any():
        raise PhiUndefined("Φ undefined on ∂D: h^2 + K <= 0 at every boundary node")
    return prof


def phi_normal_fd(model: CurvatureModel, dr: float = 1e-3, n: int | None = None) -> np.ndarray:
    """One-sided radial difference of ``H + sqrt(H^2 + K)`` between ``r = 1``
    and ``r = 1 - dr``, a cross-check for the half-Laplacian formula.
    Second-order one-sided stencil on ``r in {1, 1-dr, 1-2dr}``.
    """
    n = n or model.h.n
    th = 2.0 * np.pi * np.arange(n) / n
    k = model.h.k.astype(float)

    def phi_at(rad):
        # harmonic extension evaluated off-grid: multiplier r^|k|
        H = BoundaryFunction(model.h.coeffs * rad**k, model.h.n).evaluate(th)
        K = model.K.evaluate(rad * np.cos(th), rad * np.sin(th))
        return H + np.sqrt(H * H + K)

    f0, f1, f2 = phi_at(1.0), phi_at(1.0 - dr), phi_at(1.0 - 2 * dr)
    return (3.0 * f0 - 4.0 * f1 + f2) / (2.0 * dr)


# ---------------------------------------------------------------------------
# hypotheses
# ---------------------------------------------------------------------------


@dataclass
class CriticalPoint:
    theta: float
    x: tuple[float, float]
    dnu_phi: float
    sign: int

    def to_dict(self) -> dict:
        return {"theta": self.theta, "x": list(self.x), "dnu_phi": self.dnu_phi, "sign": self.sign}


@dataclass
class HypothesisReport:
    """Boolean verdicts on the boundary data with their witnesses.

    ``a`` is ``min h > max sqrt|K|``.  ``b_minus`` (``b_plus``) holds when
    ``d_nu Phi < 0`` (``> 0``) at every zero of ``d_tau Phi``.  The
    ``thm21_*`` fields are the existence conditions phrased through
    ``D = h/sqrt|K|``: ``thm21_i`` is ``max D > 1``, ``thm21_ii`` asks
    ``d_tau D != 0`` wherever ``D = 1``, and ``thm21_iii`` repeats ``b_minus``.
    ``thm22_i`` and ``thm22_ii`` repeat ``a`` and ``b_plus`` for the
    companion result.  ``nonexistence`` is ``min h < max sqrt|K|``.
    """

    a: bool
    b_minus: bool
    b_plus: bool
    thm21_i: bool
    thm21_ii: bool
    thm21_iii: bool
    thm22_i: bool
    thm22_ii: bool
    nonexistence: bool
    phi_critical_points: list
    dee_unit_points: list = field(default_factory=list)
    H: bool = True
    verdict: str = ""
    degenerate: bool = False
    partial: bool = False
    witnesses: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "a": self.a,
            "b_minus": self.b_minus,
            "b_plus": self.b_plus,
            "thm21_i": self.thm21_i,
            "thm21_ii": self.thm21_ii,
            "thm21_iii": self.thm21_iii,
            "thm22_i": self.thm22_i,
            "thm22_ii": self.thm22_ii,
            "nonexistence": self.nonexistence,
            "phi_critical_points": [c.to_dict() for c in self.phi_critical_points],
            "dee_unit_points": self.dee_unit_points,
            "H": self.H,
            "verdict": self.verdict,
            "degenerate": self.degenerate,
            "partial": self.partial,
            "witnesses": self.witnesses,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def boundary_zeros(fn, n: int, valid=None, upsample: int = 4) -> list[float]:
    """Zeros of a smooth periodic ``fn(theta)``: sign changes on a dense grid
    refined by bisection (``brentq``) to ``1e-10`` in theta.

    ``valid(theta)`` returns a boolean mask of angles where ``fn`` is defined;
    brackets touching an invalid sample are skipped.
    """
    m = n * upsample
    th = 2.0 * np.pi * np.arange(m + 1) / m
    vals = fn(th)
    ok = np.isfinite(vals) if valid is None else (valid(th) & np.isfinite(vals))
    roots = []
    for i in range(m):
        if not (ok[i] and ok[i + 1]):
            continue
        a, b = vals[i], vals[i + 1]
        if a == 0.0:
            roots.append(th[i])
        elif a * b < 0.0:
            roots.append(brentq(lambda t: float(fn(np.array([t]))[0]), th[i], th[i + 1],
                                xtol=ZERO_XTOL))
    roots = [float(np.mod(r, 2.0 * np.pi)) for r in roots]
    roots.sort()
    out = []
    for r in roots:
        if not out or min(abs(r - out[-1]), 2 * np.pi - abs(r - out[-1])) > 1e-8:
            out.append(r)
    if len(out) > 1 and 2 * np.pi - (out[-1] - out[0]) <= 1e-8:
        out.pop()
    return out


def check_hypotheses(model: CurvatureModel) -> HypothesisReport:
    Kv = model.K.values
    hv = model.h.values
    Kb = model.K_trace().values
    sqrtK_bd = np.sqrt(np.abs(Kb))
    sqrtK_all = np.sqrt(np.abs(Kv))
    a_ok = bool(hv.min() > sqrtK_bd.max())
    nonexist = bool(hv.min() < sqrtK_all.max())
    witnesses = {
        "min_h": float(hv.min()),
        "max_sqrt_absK_boundary": float(sqrtK_bd.max()),
        "max_sqrt_absK_disk": float(sqrtK_all.max()),
    }

    try:
        prof = phi_profile(model)
    except PhiUndefined:
        return HypothesisReport(
            a=a_ok, b_minus=False, b_plus=False, thm21_i=False, thm21_ii=False,
            thm21_iii=False, thm22_i=a_ok, thm22_ii=False, nonexistence=nonexist,
            phi_critical_points=[], H=model.satisfies_H(), verdict="Φ undefined",
            partial=True, witnesses=witnesses,
        )

    node = prof.evaluate()
    mask = node["mask"]
    partial = not bool(mask.all())
    phi_scale = float(np.nanmax(np.abs(node["phi"])))
    dtau_scale = float(np.nanmax(np.abs(node["dtau_phi"])))
    degenerate = dtau_scale <= 1e-10 * max(1.0, phi_scale)

    def valid(th):
        return prof.evaluate(th)["mask"]

    crit = []
    if not degenerate:
        zeros = boundary_zeros(lambda t: prof.evaluate(t)["dtau_phi"], prof.n, valid)
        for t in zeros:
            d = float(prof.evaluate(np.array([t]))["dnu_phi"][0])
            crit.append(CriticalPoint(t, (math.cos(t), math.sin(t)), d, int(np.sign(d))))
    dnu_scale = max(1.0, float(np.nanmax(np.abs(node["dnu_phi"]))))
    tol = 1e-10 * dnu_scale
    if degenerate or not crit:
        b_minus = b_plus = False
    else:
        b_minus = all(c.dnu_phi < -tol for c in crit)
        b_plus = all(c.dnu_phi > tol for c in crit)

    dee = node["dee"]
    thm21_i = bool(np.nanmax(dee) > 1.0) if np.isfinite(dee).any() else False
    dee_pts = []
    if np.isfinite(dee).any():
        def dee_minus_one(t):
            return prof.evaluate(t)["dee"] - 1.0

        for t in boundary_zeros(dee_minus_one, prof.n):
            dd = float(prof.evaluate(np.array([t]))["dtau_dee"][0])
            dee_pts.append({"theta": t, "dtau_dee": dd})
    dee_scale = max(1.0, float(np.nanmax(np.abs(prof.evaluate()["dtau_dee"]))))
    thm21_ii = all(abs(p["dtau_dee"]) > 1e-10 * dee_scale for p in dee_pts)
    if not dee_pts and np.allclose(dee, 1.0, atol=1e-12):
        thm21_ii = False

    if degenerate:
        verdict = "degenerate-constant"
    elif b_minus:
        verdict = "b−"
    elif b_plus:
        verdict = "b+"
    else:
        verdict = "neither b− nor b+"

    return HypothesisReport(
        a=a_ok,
        b_minus=b_minus,
        b_plus=b_plus,
        thm21_i=thm21_i,
        thm21_ii=bool(thm21_ii),
        thm21_iii=b_minus,
        thm22_i=a_ok,
        thm22_ii=b_plus,
        nonexistence=nonexist,
        phi_critical_points=crit,
        dee_unit_points=dee_pts,
        H=model.satisfies_H(),
        verdict=verdict,
        degenerate=degenerate,
        partial=partial,
        witnesses=witnesses,
    )
