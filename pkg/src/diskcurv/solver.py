"""Critical points of the perturbed energy.

* :func:`newton_solve` runs a damped Newton iteration on the collocated
  Euler-Lagrange system.  Linear steps use GMRES preconditioned by the exact
  inverse of the angle-averaged linearization, which splits into one small
  dense block per Fourier mode.  Optional barycenter gauges add two Lagrange
  multipliers (bordered in the mode-1 block of the preconditioner).
* :func:`continue_in_eps` warm-starts Newton along a schedule of ``eps``.
* :func:`gradient_flow` is an H^1 descent used as a fallback.
* :func:`morse_index` counts negative and near-zero eigenvalues of the second
  variation relative to the H^1 inner product.
"""

from __future__ import annotations

import json
import logging
import math
import re
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh, gmres

from .bubbles import BubbleParams, bubble_field
from .curvature import CurvatureModel, PerturbedCoefficients, check_hypotheses, perturb
from .diagnostics import blowup_fit, identity_residuals
from .functionals import ExponentialRangeError, energy
from .spectral import (
    DiskField,
    GridSpec,
    UnderResolvedWarning,
    _laplacian_modes,
    _modes,
    _synth,
    boundary_trace,
    quad_circle,
    quad_disk,
    spectral_tail,
    TAIL_TOL,
)

log = logging.getLogger(__name__)

GAUGES = ("none", "barycenter", "mass_barycenter")
DAMPINGS = ("none", "armijo")
BLOWUP_SUP = 40.0
BLOWUP_MASS = 1e6


class MorseError(RuntimeError):
    pass


class StepSizeError(RuntimeError):
    pass


class ContinuationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InitSpec:
    """Initial guess: ``zero``, ``constant`` (value), ``bubble`` (BubbleParams)
    or ``field`` (DiskField)."""

    kind: str = "zero"
    value: object = None

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "bubble", "field"):
            raise ValueError(f"unknown init kind {self.kind!r}")

    @classmethod
    def parse(cls, spec) -> "InitSpec":
        if isinstance(spec, InitSpec):
            return spec
        if spec is None or spec == "zero":
            return cls("zero")
        if isinstance(spec, (int, float)):
            return cls("constant", float(spec))
        if isinstance(spec, str):
            m = re.fullmatch(r"\s*constant\s*\(\s*([-+0-9.eE]+)\s*\)\s*", spec)
            if m:
                return cls("constant", float(m.group(1)))
            raise ValueError(f"cannot parse init {spec!r}")
        if isinstance(spec, dict):
            if "constant" in spec:
                return cls("constant", float(spec["constant"]))
            if "bubble" in spec:
                return cls("bubble", BubbleParams.from_dict(spec["bubble"]))
        raise ValueError(f"cannot parse init {spec!r}")

    def build(self, grid: GridSpec) -> DiskField:
        if self.kind == "zero":
            return DiskField.constant(grid, 0.0)
        if self.kind == "constant":
            return DiskField.constant(grid, float(self.value))
        if self.kind == "bubble":
            return bubble_field(self.value, grid)
        u = self.value
        if u.grid != grid:
            return DiskField.from_function(grid, u.evaluate)
        return u

    def describe(self):
        if self.kind == "constant":
            return {"constant": self.value}
        if self.kind == "bubble":
            return {"bubble": self.value.to_dict()}
        return self.kind


@dataclass(frozen=True)
class SolveConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    newton_tol: float = 1e-10
    max_newton: int = 50
    damping: str = "armijo"
    gauge: str = "none"
    init: InitSpec = field(default_factory=InitSpec)
    gmres_tol: float = 1e-12
    morse: bool = True
    n_eigs: int = 6
    precision: str = "extended"

    def __post_init__(self):
        if not self.newton_tol > 0 or not self.gmres_tol > 0:
            raise ValueError("tolerances must be positive")
        if int(self.max_newton) != self.max_newton or self.max_newton < 1:
            raise ValueError("max_newton must be a positive integer")
        if self.damping not in DAMPINGS:
            raise ValueError(f"damping must be one of {DAMPINGS}")
        if self.gauge not in GAUGES:
            raise ValueError(f"gauge must be one of {GAUGES}")
        if self.precision not in ("extended", "double"):
            raise ValueError("precision must be 'extended' or 'double'")
        object.__setattr__(self, "init", InitSpec.parse(self.init))

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "newton_tol": self.newton_tol,
            "max_newton": self.max_newton,
            "damping": self.damping,
            "gauge": self.gauge,
            "init": self.init.describe(),
            "morse": self.morse,
            "n_eigs": self.n_eigs,
            "precision": self.precision,
        }


@dataclass
class SolveReport:
    u: DiskField
    converged: bool
    newton_iters: int
    final_residual: float
    identity_residuals: dict
    morse_index: int | None
    near_zero_modes: int | None
    eps: float
    reason: str = ""
    residual_history: list = field(default_factory=list)
    step_lengths: list = field(default_factory=list)
    multipliers: tuple = (0.0, 0.0)
    constraint: tuple = (0.0, 0.0)
    eigenvalues: list = field(default_factory=list)
    singular_linearization: bool = False
    under_resolved: bool = False
    blowup: dict | None = None
    energy: float | None = None
    energy_history: list = field(default_factory=list)

    def to_dict(self, include_field: bool = False) -> dict:
        doc = {
            "converged": self.converged,
            "newton_iters": self.newton_iters,
            "final_residual": self.final_residual,
            "identity_residuals": self.identity_residuals,
            "morse_index": self.morse_index,
            "near_zero_modes": self.near_zero_modes,
            "eps": self.eps,
            "reason": self.reason,
            "residual_history": list(self.residual_history),
            "step_lengths": list(self.step_lengths),
            "multipliers": list(self.multipliers),
            "constraint": list(self.constraint),
            "eigenvalues": list(self.eigenvalues),
            "singular_linearization": self.singular_linearization,
            "under_resolved": self.under_resolved,
            "blowup": self.blowup,
            "energy": self.energy,
            "sup_u": float(self.u.values.max()) if self.u.is_finite() else None,
            "grid": self.u.grid.to_dict(),
        }
        if include_field:
            doc["u"] = self.u.values.tolist()
        return doc

    def to_json(self, include_field: bool = False) -> str:
        return json.dumps(self.to_dict(include_field), sort_keys=True)


@dataclass
class ContinuationTrace:
    eps_schedule: list
    reports: list
    sup_u_trace: list
    mass_trace: list
    aborted: bool = False
    reason: str = ""

    def to_dict(self) -> dict:
        return {
            "eps_schedule": list(self.eps_schedule),
            "reports": [r.to_dict() for r in self.reports],
            "sup_u_trace": list(self.sup_u_trace),
            "mass_trace": [list(m) for m in self.mass_trace],
            "aborted": self.aborted,
            "reason": self.reason,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# ---------------------------------------------------------------------------
# collocated system
# ---------------------------------------------------------------------------


class _System:
    """Collocated Euler-Lagrange system at fixed coefficients.

    Row 0 of the value array (r = 1) carries the boundary condition, the
    remaining rows the interior equation.
    """

    def __init__(self, coeffs: PerturbedCoefficients, gauge: str):
        self.c = coeffs
        self.grid = coeffs.grid
        self.gauge = gauge
        self.ng = 0 if gauge == "none" else 2
        g = self.grid
        self.n = g.n_theta
        self.ops = g.ops
        self.x1 = g.x1
        self.x2 = g.x2
        self.cos = np.cos(g.theta)
        self.sin = np.sin(g.theta)
        self.Ke = coeffs.K_eps.values
        self.he = coeffs.h_eps.values
        self.W = g.weights
        self.wb = 2.0 * np.pi / self.n

    # operators on raw arrays
    def lap(self, V):
        return _synth(_laplacian_modes(_modes(V), self.grid), self.n)

    def dnu(self, V):
        C = _modes(V)
        D = self.ops.mats(C.dtype)
        out = np.empty(C.shape[1], dtype=C.dtype)
        out[0::2] = D[1][0] @ C[:, 0::2]
        out[1::2] = D[-1][0] @ C[:, 1::2]
        return _synth(out, self.n)

    def check_range(self, U):
        if not np.all(np.isfinite(U)):
            raise ExponentialRangeError("field out of exponential range: non-finite values")
        if U.max() > 700.0:
            raise ExponentialRangeError("field out of exponential range")

    def residual(self, U, mu=None):
        """Ungauged collocated residual and, if gauged, the constraint values."""
        self.check_range(U)
        eu = np.exp(U)
        R = -self.lap(U) + 2.0 * self.c.K_tilde - 2.0 * self.Ke * eu
        R[0] = self.dnu(U) + 2.0 * self.c.h_tilde - 2.0 * self.he * np.exp(U[0] / 2.0)
        if self.ng == 0:
            return R, np.zeros(0)
        return R, self.constraint(U)

    def constraint(self, U):
        if self.gauge == "barycenter":
            eh = np.exp(U[0] / 2.0)
            return np.array([self.wb * np.sum(self.cos * eh), self.wb * np.sum(self.sin * eh)])
        eu = np.exp(U)
        return np.array([np.sum(self.W * self.x1 * eu), np.sum(self.W * self.x2 * eu)])

    def full_residual(self, U, mu):
        R, G = self.residual(U)
        if self.ng:
            R = R.copy()
            R[1:] += mu[0] * self.x1[1:] + mu[1] * self.x2[1:]
        return R, G

    def linearize(self, U):
        eu = np.exp(U)
        self.Gint = 2.0 * self.Ke * eu
        self.gbd = self.he * np.exp(U[0] / 2.0)
        if self.gauge == "barycenter":
            self.cw = (0.5 * self.wb * self.cos * np.exp(U[0] / 2.0),
                       0.5 * self.wb * self.sin * np.exp(U[0] / 2.0))
        elif self.gauge == "mass_barycenter":
            self.cw = (self.W * self.x1 * eu, self.W * self.x2 * eu)
        # Jacobian products run in float64 whatever the iterate's precision
        self.Gint = _f64(self.Gint)
        self.gbd = _f64(self.gbd)
        if self.ng:
            self.cw = tuple(_f64(c) for c in self.cw)
        self._build_preconditioner(_f64(U))

    def jvp(self, V, dmu):
        out = -self.lap(V) - self.Gint * V
        out[0] = self.dnu(V) - self.gbd * V[0]
        if self.ng == 0:
            return out, np.zeros(0)
        out[1:] += dmu[0] * self.x1[1:] + dmu[1] * self.x2[1:]
        if self.gauge == "barycenter":
            g = np.array([np.sum(self.cw[0] * V[0]), np.sum(self.cw[1] * V[0])])
        else:
            g = np.array([np.sum(self.cw[0] * V), np.sum(self.cw[1] * V)])
        return out, g

    # per-mode preconditioner -------------------------------------------------
    def _build_preconditioner(self, U):
        g = self.grid
        ops = self.ops
        r = g.r
        gbar = self.Gint.mean(axis=1)
        gb0 = float(self.gbd.mean())
        self.blocks = []
        self.singular = False
        for k in g.k:
            p = 1 if k % 2 == 0 else -1
            A = -(ops.D2[p] + ops.D[p] / r[:, None] - np.diag(k * k / r**2)) - np.diag(gbar)
            A[0] = ops.D[p][0]
            A[0, 0] -= gb0
            if k == 1 and self.ng:
                border = np.zeros((r.size + 1, r.size + 1))
                border[:-1, :-1] = A
                border[1:-1, -1] = r[1:] / 2.0
                if self.gauge == "barycenter":
                    E0 = float(np.exp(U[0] / 2.0).mean())
                    border[-1, 0] = np.pi * E0
                else:
                    E = np.exp(U).mean(axis=1)
                    border[-1, :-1] = 2.0 * np.pi * ops.w * r * E
                A = border
            self.blocks.append(self._factor(A))

    def _factor(self, A):
        try:
            cond = np.linalg.cond(A)
        except np.linalg.LinAlgError:
            cond = np.inf
        if not np.isfinite(cond) or cond > 1e13:
            self.singular = True
            return ("pinv", np.linalg.pinv(A, rcond=1e-12))
        return ("lu", sla.lu_factor(A))

    @staticmethod
    def _solve_block(blk, b):
        kind, data = blk
        if kind == "lu":
            return sla.lu_solve(data, b.real) + 1j * sla.lu_solve(data, b.imag)
        return data @ b

    def precondition(self, Y, gy):
        C = _modes(Y)
        out = np.empty_like(C)
        mu = np.zeros(self.ng)
        for k, blk in enumerate(self.blocks):
            if k == 1 and self.ng:
                rhs = np.concatenate((C[:, 1], [gy[0] - 1j * gy[1]]))
                sol = self._solve_block(blk, rhs)
                out[:, 1] = sol[:-1]
                mu = np.array([sol[-1].real, -sol[-1].imag])
            else:
                out[:, k] = self._solve_block(blk, C[:, k])
        return _synth(out, self.n), mu


def _pack(V, m):
    return np.concatenate((V.ravel(), m))


def _newton_step(sys: _System, U, mu, tol):
    shape = U.shape
    N = U.size
    R, G = sys.full_residual(U, mu)
    b = -_pack(R, G).astype(np.float64)

    def mv(x):
        out, g = sys.jvp(x[:N].reshape(shape), x[N:])
        return _pack(out, g)

    def pc(x):
        V, m = sys.precondition(x[:N].reshape(shape), x[N:])
        return _pack(V, m)

    size = N + sys.ng
    A = LinearOperator((size, size), matvec=mv, dtype=float)
    M = LinearOperator((size, size), matvec=pc, dtype=float)
    x0 = pc(b)
    x, info = gmres(A, b, x0=x0, M=M, rtol=tol, atol=0.0, restart=40, maxiter=10)
    return x[:N].reshape(shape), x[N:], info


def _merit(R, G):
    return float(np.sum(R * R) + np.sum(G * G))


def _f64(x):
    return np.asarray(x, dtype=np.float64)


def newton_solve(model: CurvatureModel, eps: float, cfg: SolveConfig | None = None,
                 u0: DiskField | None = None, identities: bool = True) -> SolveReport:
    """Damped Newton on the collocated perturbed problem."""
    cfg = cfg or SolveConfig()
    model = model.on_grid(cfg.grid)
    coeffs = perturb(model, eps)
    sys = _System(coeffs, cfg.gauge)
    U = (u0 if u0 is not None else cfg.init.build(cfg.grid))
    if U.grid != cfg.grid:
        U = DiskField.from_function(cfg.grid, U.evaluate)
    work = np.longdouble if cfg.precision == "extended" else np.float64
    U = np.array(U.values, dtype=work)
    mu = np.zeros(sys.ng)
    history = []
    alphas = []
    reason = ""
    growth = 0
    stall = 0
    singular = False
    converged = False
    blowup = None
    it = 0

    def measure(U, mu):
        R, G = sys.residual(U)
        sup = float(max(np.abs(R).max(), np.abs(G).max() if G.size else 0.0))
        return sup

    try:
        res = measure(U, mu)
    except ExponentialRangeError as exc:
        res = math.inf
        reason = str(exc)
    history.append(res)
    while math.isfinite(res):
        gauge_ok = True
        if sys.ng:
            gauge_ok = float(np.abs(sys.constraint(U)).max()) < 1e-10
        if res < cfg.newton_tol and gauge_ok:
            converged = True
            reason = "converged"
            break
        if it >= cfg.max_newton:
            reason = "max_newton"
            break
        it += 1
        sys.linearize(U)
        singular = singular or sys.singular
        dU, dmu, info = _newton_step(sys, U, mu, cfg.gmres_tol)
        m0 = _merit(*sys.full_residual(U, mu))
        alpha = 1.0
        accepted = False
        while True:
            Un = U + alpha * dU
            mun = mu + alpha * dmu
            try:
                mn = _merit(*sys.full_residual(Un, mun))
            except ExponentialRangeError:
                mn = math.inf
            if cfg.damping == "none" or mn <= (1.0 - 1e-4 * alpha) * m0:
                accepted = math.isfinite(mn)
                break
            alpha *= 0.5
            if alpha < 2.0**-20:
                break
        if not math.isfinite(mn):
            reason = "diverged: non-finite iterate"
            res = math.inf
            break
        U, mu = Un, mun
        try:
            new_res = measure(U, mu)
        except ExponentialRangeError as exc:
            reason = f"diverged: {exc}"
            res = math.inf
            break
        history.append(new_res)
        alphas.append(alpha)
        log.debug("newton %d: residual %.3e alpha %.3g gmres %d", it, new_res, alpha, info)
        # a damped step counts against convergence when the residual grows, the
        # line search fails, or a heavily damped step leaves the residual flat
        stalled = alpha < 0.05 and new_res > 0.99 * res
        growth = growth + 1 if (new_res > res or not accepted or stalled) else 0
        # stagnation at the rounding floor: no halving of the residual in 3 steps
        stall = stall + 1 if (new_res > 0.5 * res and new_res < 1e-6) else 0
        res = new_res
        sup_u = float(U.max())
        bmass = float(sys.wb * np.sum(np.exp(np.minimum(U[0], 700.0) / 2.0)))
        if sup_u > BLOWUP_SUP or bmass > BLOWUP_MASS:
            blowup = {"sup_u": sup_u, "boundary_mass": bmass, "iteration": it}
            blowup.update(_route_to_fitter(U, cfg.grid, model, eps))
            reason = "diverged: blow-up watch"
            break
        if growth >= 5:
            reason = "diverged"
            break
        if stall >= 3:
            reason = "stagnated"
            break

    u = DiskField(cfg.grid, U)
    if not converged and not reason.startswith("diverged") and reason not in ("stagnated", "max_newton"):
        reason = reason or "diverged"
    if singular:
        reason = (reason + "; singular linearization").strip("; ")

    report = SolveReport(
        u=u,
        converged=converged,
        newton_iters=it,
        final_residual=float(res),
        identity_residuals={},
        morse_index=None,
        near_zero_modes=None,
        eps=float(eps),
        reason=reason,
        residual_history=[float(h) for h in history],
        step_lengths=alphas,
        multipliers=tuple(float(m) for m in mu) if sys.ng else (0.0, 0.0),
        constraint=tuple(float(c) for c in sys.constraint(U)) if (sys.ng and u.is_finite()) else (0.0, 0.0),
        singular_linearization=singular,
        blowup=blowup,
    )
    if u.is_finite() and u.values.max() < 700:
        report.under_resolved = spectral_tail(u) > TAIL_TOL
        if report.under_resolved:
            warnings.warn("solution is under-resolved on this grid", UnderResolvedWarning, stacklevel=2)
        if converged:
            report.energy = energy(u, coeffs, check=False).total
            if identities:
                report.identity_residuals = _identities_dict(u, coeffs)
            if cfg.morse:
                idx, nz, ev = morse_index(u, coeffs, cfg.n_eigs)
                report.morse_index, report.near_zero_modes, report.eigenvalues = idx, nz, ev
    return report


def _route_to_fitter(U, grid: GridSpec, model: CurvatureModel, eps: float) -> dict:
    """Single-bubble fit of a halted iterate; failures are reported, not raised."""
    try:
        fit = blowup_fit(DiskField(grid, np.asarray(U, dtype=float)), model, eps, force=True)
    except (ValueError, ArithmeticError) as exc:
        return {"fit": None, "fit_error": str(exc)}
    return {"fit": fit.to_dict()}


def _identities_dict(u, coeffs) -> dict:
    ir = identity_residuals(u, coeffs)
    return {
        "gauss_bonnet": ir.gauss_bonnet,
        "kazdan_warner": ir.kazdan_warner,
        "pohozaev_rotation": ir.pohozaev["rotation"],
        "pohozaev_conformal": ir.pohozaev["conformal"],
    }


# ---------------------------------------------------------------------------
# continuation
# ---------------------------------------------------------------------------


def default_schedule(model: CurvatureModel, eps0: float = 0.1, steps: int = 8) -> list:
    """``s * eps0 * 2**-j`` for ``j < steps`` followed by 0, with the sign ``s``
    chosen from the boundary hypotheses (+ under b-, - under b+, else +)."""
    rep = check_hypotheses(model)
    sign = -1.0 if (rep.b_plus and not rep.b_minus) else 1.0
    return [sign * eps0 * 2.0**-j for j in range(steps)] + [0.0]


def validate_schedule(schedule) -> list:
    sched = [float(e) for e in schedule]
    if not sched:
        raise ContinuationError("empty schedule")
    for e in sched:
        if 1.0 + e <= 0.0:
            raise ContinuationError(f"invalid perturbation: eps = {e} crosses -1")
    for a, b in zip(sched, sched[1:]):
        if not (abs(b) < abs(a) and a * b >= 0):
            raise ContinuationError("schedule must be strictly monotone toward 0 without changing sign")
    return sched


def _trace_exp_half(u: DiskField):
    return boundary_trace(u).map(lambda v: np.exp(v / 2.0))


def continue_in_eps(model: CurvatureModel, eps_from: float | None = None,
                    cfg: SolveConfig | None = None, schedule=None) -> ContinuationTrace:
    """Warm-started Newton solves along ``schedule`` (toward ``eps = 0``)."""
    cfg = cfg or SolveConfig()
    model = model.on_grid(cfg.grid)
    if schedule is None:
        schedule = default_schedule(model, 0.1 if eps_from is None else abs(eps_from))
        if eps_from is not None and eps_from != 0:
            schedule = [math.copysign(abs(e), eps_from) if e else 0.0 for e in schedule]
    sched = validate_schedule(schedule)
    if eps_from is not None and abs(sched[0] - eps_from) > 1e-15:
        sched = validate_schedule([eps_from] + sched)
    trace = ContinuationTrace(eps_schedule=sched, reports=[], sup_u_trace=[], mass_trace=[])
    u = None
    for i, e in enumerate(sched):
        rep = newton_solve(model, e, cfg, u0=u)
        trace.reports.append(rep)
        if rep.u.is_finite() and rep.u.values.max() < 700:
            trace.sup_u_trace.append(float(rep.u.values.max()))
            trace.mass_trace.append((quad_disk(rep.u.map(np.exp)), quad_circle(_trace_exp_half(rep.u))))
        else:
            trace.sup_u_trace.append(float("inf"))
            trace.mass_trace.append((float("inf"), float("inf")))
        if not rep.converged:
            trace.aborted = True
            trace.reason = (f"first solve failed at eps={e}: {rep.reason}" if i == 0
                            else f"solve failed at eps={e}: {rep.reason}")
            break
        u = rep.u
    return trace


# ---------------------------------------------------------------------------
# gradient flow
# ---------------------------------------------------------------------------


def _sobolev_gradient(sys: _System, R):
    """Riesz representative of the first variation in the H^1 inner product:
    ``-Lap w + w = R_int`` in the disk, ``d_nu w = R_bd`` on the boundary."""
    g = sys.grid
    ops = sys.ops
    r = g.r
    C = _modes(R)
    out = np.empty_like(C)
    for k in g.k:
        p = 1 if k % 2 == 0 else -1
        A = -(ops.D2[p] + ops.D[p] / r[:, None] - np.diag(k * k / r**2)) + np.eye(r.size)
        A[0] = ops.D[p][0]
        out[:, k] = np.linalg.solve(A, C[:, k])
    return _synth(out, sys.n)


def gradient_flow(model: CurvatureModel, eps: float, cfg: SolveConfig | None = None,
                  dt: float = 0.05, t_max: float = 50.0, u0: DiskField | None = None,
                  handoff_tol: float = 1e-3, handoff: bool = True,
                  energy_tol: float = 1e-12) -> SolveReport:
    """Explicit H^1 descent ``u <- u - dt * grad_H1 I_eps(u)``.

    The energy is checked after every step; an increase beyond ``energy_tol``
    (relative to ``max(1, |I|)``) raises :class:`StepSizeError`.  When the
    collocated residual drops below ``handoff_tol`` the iterate is handed to
    :func:`newton_solve` (unless ``handoff`` is false).
    """
    cfg = cfg or SolveConfig()
    model = model.on_grid(cfg.grid)
    coeffs = perturb(model, eps)
    sys = _System(coeffs, "none")
    u = u0 if u0 is not None else cfg.init.build(cfg.grid)
    U = np.array(u.values, dtype=float)
    E = energy(DiskField(cfg.grid, U), coeffs, check=False).total
    energies = [E]
    residuals = []
    steps = int(math.ceil(t_max / dt))
    reason = "t_max"
    for step in range(steps):
        R, _ = sys.residual(U)
        res = float(np.abs(R).max())
        residuals.append(res)
        if handoff and res < handoff_tol:
            reason = "handoff"
            break
        W = _sobolev_gradient(sys, R)
        Un = U - dt * W
        try:
            En = energy(DiskField(cfg.grid, Un), coeffs, check=False).total
        except ExponentialRangeError as exc:
            raise StepSizeError(f"step {step}: {exc}") from exc
        if En > E + energy_tol * max(1.0, abs(E)):
            raise StepSizeError(f"energy increased at step {step}: {E!r} -> {En!r}; reduce dt")
        U, E = Un, En
        energies.append(E)
        if float(U.max()) > BLOWUP_SUP:
            reason = "blow-up watch"
            break
    u = DiskField(cfg.grid, U)
    if reason == "handoff":
        rep = newton_solve(model, eps, cfg, u0=u)
        rep.energy_history = energies
        rep.reason = f"gradient flow handoff after {len(energies) - 1} steps; {rep.reason}"
        return rep
    R, _ = sys.residual(U)
    return SolveReport(
        u=u, converged=False, newton_iters=0, final_residual=float(np.abs(R).max()),
        identity_residuals={}, morse_index=None, near_zero_modes=None, eps=float(eps),
        reason=reason, residual_history=residuals, energy=E, energy_history=energies,
    )


def flow_step(model: CurvatureModel, eps: float, u: DiskField, dt: float) -> DiskField:
    """A single explicit H^1 descent step (no energy check)."""
    coeffs = perturb(model.on_grid(u.grid), eps)
    sys = _System(coeffs, "none")
    U = np.asarray(u.values, dtype=np.float64)
    R, _ = sys.residual(U)
    return DiskField(u.grid, U - dt * _sobolev_gradient(sys, R))


# ---------------------------------------------------------------------------
# Morse index
# ---------------------------------------------------------------------------


class _ModeBasis:
    """Real Fourier basis per radial node: ``a_0``, ``a_k cos k theta`` and
    ``b_k sin k theta`` for ``1 <= k < n/2`` (the Nyquist mode is left out)."""

    def __init__(self, grid: GridSpec):
        self.grid = grid
        self.n = grid.n_theta
        self.K = self.n // 2
        self.nr = grid.n_r
        ops = grid.ops
        r, w = grid.r, ops.w
        self.dir_blocks = []
        self.mass_blocks = []
        for k in range(self.K):
            p = 1 if k % 2 == 0 else -1
            D = ops.D[p]
            ck = 2.0 * np.pi if k == 0 else np.pi
            Dk = D.T @ (w[:, None] * D) + np.diag(k * k * w / r**2)
            self.dir_blocks.append(ck * Dk)
            self.mass_blocks.append(ck * (Dk + np.diag(w)))

    @property
    def size(self) -> int:
        return self.nr * (2 * self.K - 1)

    def split(self, X):
        A = X.reshape(self.nr, 2 * self.K - 1)
        a = A[:, : self.K]
        b = np.concatenate((np.zeros((self.nr, 1)), A[:, self.K :]), axis=1)
        return a, b

    def join(self, a, b):
        return np.concatenate((a, b[:, 1:]), axis=1).ravel()

    def synth(self, X):
        a, b = self.split(X)
        C = np.zeros((self.nr, self.K + 1), dtype=complex)
        C[:, 0] = a[:, 0]
        C[:, 1 : self.K] = (a[:, 1:] - 1j * b[:, 1:]) / 2.0
        return _synth(C, self.n)

    def analysis_adjoint(self, F):
        C = np.fft.rfft(F, axis=-1)
        a = C[:, : self.K].real.copy()
        b = -C[:, : self.K].imag.copy()
        b[:, 0] = 0.0
        return self.join(a, b)

    def blockwise(self, X, blocks):
        a, b = self.split(X)
        oa = np.empty_like(a)
        ob = np.zeros_like(b)
        for k in range(self.K):
            oa[:, k] = blocks[k] @ a[:, k]
            if k:
                ob[:, k] = blocks[k] @ b[:, k]
        return self.join(oa, ob)


def morse_index(u: DiskField, coeffs: PerturbedCoefficients, n_eigs: int = 6,
                neg_tol: float = 1e-6, zero_tol: float = 1e-6, method: str = "auto"):
    """Negative and near-zero eigenvalue counts of the second variation

    ``Q(v) = int |grad v|^2 - 2 int K_eps e^u v^2 - int_{dD} h_eps e^{u/2} v^2``

    relative to the H^1 inner product ``int |grad v|^2 + v^2``.

    Returns ``(index, near_zero, eigenvalues)`` where ``eigenvalues`` are the
    lowest ``n_eigs`` generalized eigenvalues in increasing order.  When the
    weights are angle-independent the problem splits into dense per-mode
    blocks; otherwise (or with ``method="iterative"``) Lanczos iterations run
    on the operator symmetrized by the block-diagonal H^1 Gram matrix.
    """
    grid = u.grid
    coeffs_grid = coeffs.grid
    if coeffs_grid != grid:
        raise ValueError("field and coefficients must share a grid")
    G = 2.0 * coeffs.K_eps.values * np.exp(u.values)
    g = coeffs.h_eps.values * np.exp(u.values[0] / 2.0)
    basis = _ModeBasis(grid)
    w = grid.ops.w
    scale_G = max(1.0, float(np.abs(G).max()))
    scale_g = max(1.0, float(np.abs(g).max()))
    radial = (float(np.abs(G - G.mean(axis=1, keepdims=True)).max()) < 1e-12 * scale_G
              and float(np.abs(g - g.mean()).max()) < 1e-12 * scale_g)
    if method == "iterative":
        radial = False
    elif method not in ("auto", "iterative"):
        raise ValueError("method must be 'auto' or 'iterative'")
    G = np.asarray(G, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)

    if radial:
        Gbar = G.mean(axis=1)
        gbar = float(g.mean())
        eigs = []
        for k in range(basis.K):
            ck = 2.0 * np.pi if k == 0 else np.pi
            Q = basis.dir_blocks[k] - ck * np.diag(w * Gbar)
            Q[0, 0] -= ck * gbar
            lam = sla.eigh(Q, basis.mass_blocks[k], eigvals_only=True)
            eigs.extend(lam if k == 0 else np.repeat(lam, 2))
        eigs = np.sort(np.asarray(eigs))
    else:
        Wq = grid.weights
        wb = 2.0 * np.pi / grid.n_theta
        inv_sqrt = []
        for M in basis.mass_blocks:
            lam, V = np.linalg.eigh(M)
            inv_sqrt.append((V / np.sqrt(lam)) @ V.T)

        def Qx(X):
            V = basis.synth(X)
            F = -Wq * G * V
            F[0] -= wb * g * V[0]
            return basis.blockwise(X, basis.dir_blocks) + basis.analysis_adjoint(F)

        def Bx(X):
            Y = basis.blockwise(X, inv_sqrt)
            return basis.blockwise(Qx(Y), inv_sqrt)

        n = basis.size
        op = LinearOperator((n, n), matvec=Bx, dtype=float)
        k = min(max(n_eigs, 4), n - 2)
        try:
            vals = eigsh(op, k=k, which="SA", tol=1e-12, maxiter=20000,
                         ncv=min(n - 1, max(4 * k, 40)), return_eigenvectors=False,
                         v0=np.ones(n))
        except ArpackNoConvergence as exc:
            raise MorseError(f"eigensolver did not converge: {len(exc.eigenvalues)} of {k} "
                             f"eigenvalues after maxiter=20000") from exc
        eigs = np.sort(vals)
    index = int(np.sum(eigs < -neg_tol))
    near = int(np.sum(np.abs(eigs) < zero_tol))
    return index, near, [float(x) for x in eigs[:n_eigs]]
