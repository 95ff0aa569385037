"""Min-max geometry built from the bubble family: the four test functions,
the three-segment paths ``gamma_p``, the sphere map ``Lambda``, the constraint
map ``chi = (A - 1, B1, B2)`` and the Brouwer degree of ``chi o Lambda``.

All paths use ``Psi(x, phi, lam)`` with ``k = -1``, i.e. the bubble centred at
``a = lam * p``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np

from .bubbles import BubbleParams, bubble_values, phi_from_hh, resolving_grid
from .curvature import CurvatureModel, perturb
from .functionals import (
    ConstraintState,
    ExponentialRangeError,
    B_remainder,
    J_functional,
    constraint_state,
    energy,
)
from .spectral import DiskField, GridSpec

SEGMENTS = ("g1", "g2", "g3")
SHIFT_MARGIN = 0.05


class LinkingError(ValueError):
    pass


class DegreeUndefined(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def normalization_shift(model: CurvatureModel, margin: float = SHIFT_MARGIN) -> float:
    """Constant ``c`` such that ``u + c`` turns ``(K, h)`` into ``(K e^-c, h e^-c/2)``
    with ``h > 1 + margin`` and ``-1 + margin < K < -margin`` at every node.

    The admissible ``c`` form an interval; the value of least magnitude is
    returned, so models that already comply are left untouched (``c = 0``).
    """
    K = np.asarray(model.K.values, dtype=float)
    h = np.asarray(model.h.values, dtype=float)
    if not np.all(K < 0):
        raise LinkingError("normalization needs K < 0 at every node")
    if not np.all(h > 0):
        raise LinkingError("normalization needs h > 0 at every node")
    absK = -K
    lo = math.log(absK.max() / (1.0 - margin))
    hi = min(2.0 * math.log(h.min() / (1.0 + margin)), math.log(absK.min() / margin))
    if lo >= hi:
        raise LinkingError(
            f"no normalization shift exists with margin {margin}: need c in ({lo:.4g}, {hi:.4g})")
    return float(min(max(0.0, lo), hi))


@dataclass(frozen=True)
class LinkingConfig:
    """Parameters of the linking construction.

    ``hh0`` fixes ``phi0 = hh0 + sqrt(hh0^2 - 1)``, the starting concentration
    profile of the second segment; ``hh`` is the constant geodesic curvature of
    the comparison functional ``J_hh``.
    """

    sigma: float = 0.01
    delta: float = 0.2
    hh0: float = 1.5
    hh: float = 1.25
    normalization_shift: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.sigma < 1.0:
            raise LinkingError("sigma must lie in (0, 1)")
        if not 0.0 < self.delta < 1.0:
            raise LinkingError("delta must lie in (0, 1)")
        if not self.hh0 > 1.0:
            raise LinkingError("hh0 must exceed 1")
        if not 1.0 < self.hh < self.hh0:
            raise LinkingError("hh must lie in (1, hh0)")
        if not self.phi0 > 1.0 + self.sigma:
            raise LinkingError("phi0 = hh0 + sqrt(hh0^2 - 1) must exceed 1 + sigma")

    @property
    def phi0(self) -> float:
        return phi_from_hh(self.hh0)

    @property
    def alpha(self) -> float:
        return 8.0 * math.pi * self.delta / (2.0 + self.delta)

    @property
    def eps_window(self) -> tuple[float, float]:
        """The open interval ``(-delta, -delta/2)`` of the linking regime."""
        return (-self.delta, -0.5 * self.delta)

    @classmethod
    def for_model(cls, model: CurvatureModel, sigma: float = 0.01, delta: float = 0.2,
                  hh0: float | None = None, hh: float | None = None,
                  margin: float = SHIFT_MARGIN) -> "LinkingConfig":
        """Compute the normalization shift and default ``hh0``, ``hh`` from the
        shifted data: ``hh0`` halfway between 1 and ``min h``, ``hh`` halfway
        between 1 and ``hh0``."""
        c = normalization_shift(model, margin)
        hmin = float(np.min(model.scaled(c).h.values))
        if hh0 is None:
            hh0 = 0.5 * (1.0 + hmin)
        if hh is None:
            hh = 0.5 * (1.0 + hh0)
        return cls(sigma=sigma, delta=delta, hh0=hh0, hh=hh, normalization_shift=c)

    def shifted(self, model: CurvatureModel) -> CurvatureModel:
        """The model after the normalization shift, checked pointwise."""
        m = model.scaled(self.normalization_shift)
        K = np.asarray(m.K.values, dtype=float)
        h = np.asarray(m.h.values, dtype=float)
        if not (np.all(h > 1.0) and np.all(K > -1.0) and np.all(K < 0.0)):
            raise LinkingError("shifted model violates h > 1 and K in (-1, 0)")
        return m

    def with_(self, **kw) -> "LinkingConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["phi0"] = self.phi0
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "LinkingConfig":
        keys = ("sigma", "delta", "hh0", "hh", "normalization_shift")
        return cls(**{k: float(doc[k]) for k in keys if k in doc})


# ---------------------------------------------------------------------------
# test functions and paths
# ---------------------------------------------------------------------------


def _unit(p) -> tuple[float, float]:
    n = math.hypot(float(p[0]), float(p[1]))
    if not abs(n - 1.0) < 1e-12:
        raise LinkingError("p must be a unit vector")
    return (float(p[0]) / n, float(p[1]) / n)


def _psi(phi: float, lam: float, p) -> BubbleParams:
    return BubbleParams.from_phi(phi, a=(lam * p[0], lam * p[1]), k=-1.0)


def test_functions(cfg: LinkingConfig, grid: GridSpec, p=(1.0, 0.0)):
    """``(u0, u1, u2, u3)`` on ``grid`` for the direction ``p``."""
    p = _unit(p)
    s = cfg.sigma
    u0 = DiskField.constant(grid, 3.0 * math.log(s))
    u1 = DiskField(grid, bubble_values(_psi(cfg.phi0, 1.0 - s, p), grid.x1, grid.x2))
    u2 = DiskField(grid, bubble_values(_psi(1.0 + s, 1.0 - s, p), grid.x1, grid.x2))
    u3 = DiskField(grid, bubble_values(_psi(1.0 + s, 0.0, p), grid.x1, grid.x2))
    return u0, u1, u2, u3


# keep pytest from collecting this when imported into a test module
test_functions.__test__ = False


def path_params(cfg: LinkingConfig, tau: float) -> tuple[str, dict]:
    """Segment name and parameters at ``tau``.  The junctions belong to the
    earlier segment, whose endpoint coincides with the next segment's start."""
    if not 0.0 <= tau <= 1.0:
        raise LinkingError("tau must lie in [0, 1]")
    s = cfg.sigma
    if tau <= 1.0 / 3.0:
        return "g1", {"t": 3.0 * tau, "u0": 3.0 * math.log(s), "phi": cfg.phi0, "lam": 1.0 - s}
    if tau <= 2.0 / 3.0:
        t = 3.0 * tau - 1.0
        return "g2", {"t": t, "phi": (1.0 - t) * cfg.phi0 + t * (1.0 + s), "lam": 1.0 - s}
    t = 3.0 * tau - 2.0
    return "g3", {"t": t, "phi": 1.0 + s, "lam": (1.0 - t) * (1.0 - s)}


def _path_values(cfg: LinkingConfig, p, tau: float, x1, x2) -> np.ndarray:
    seg, prm = path_params(cfg, tau)
    psi = bubble_values(_psi(prm["phi"], prm["lam"], p), x1, x2)
    if seg == "g1":
        t = prm["t"]
        return (1.0 - t) * prm["u0"] + t * psi
    return psi


def gamma_path(cfg: LinkingConfig, p, tau: float, grid: GridSpec) -> DiskField:
    """``gamma_p(tau)``: the segment ``(1-t) u0 + t u1`` on ``[0, 1/3]``, then
    ``phi`` from ``phi0`` down to ``1 + sigma`` at ``lam = 1 - sigma``, then
    ``lam`` from ``1 - sigma`` down to 0 at ``phi = 1 + sigma``."""
    p = _unit(p)
    return DiskField(grid, _path_values(cfg, p, tau, grid.x1, grid.x2))


def sphere_to_path(y) -> tuple[tuple[float, float], float]:
    """Cylindrical coordinates ``y = (t, sqrt(1-t^2) p)`` mapped to ``(p, tau)``
    with ``tau = (t + 1)/2``; at the poles ``p`` is immaterial and set to (1, 0)."""
    y = np.asarray(y, dtype=float)
    if not abs(np.linalg.norm(y) - 1.0) < 1e-9:
        raise LinkingError("y must lie on the unit sphere")
    t = float(np.clip(y[0], -1.0, 1.0))
    rho = math.hypot(y[1], y[2])
    p = (1.0, 0.0) if rho < 1e-15 else (y[1] / rho, y[2] / rho)
    return p, 0.5 * (t + 1.0)


def lambda_map(cfg: LinkingConfig, y, grid: GridSpec) -> DiskField:
    p, tau = sphere_to_path(y)
    return gamma_path(cfg, p, tau, grid)


# ---------------------------------------------------------------------------
# constraint map on the boundary
# ---------------------------------------------------------------------------


def boundary_quadrature_size(cfg: LinkingConfig) -> int:
    """Trapezoid nodes for boundary integrals of path members: the error of the
    periodic rule decays like ``lam^n`` with ``lam <= 1 - sigma``."""
    n = 256
    while n < 40.0 / cfg.sigma:
        n *= 2
    return n


def chi_path(cfg: LinkingConfig, p, tau: float, n: int | None = None) -> np.ndarray:
    """``chi(gamma_p(tau)) = (A - 1, B1, B2)`` by the trapezoid rule on ``n``
    boundary nodes, using closed-form boundary values of the path."""
    n = n or boundary_quadrature_size(cfg)
    th = 2.0 * np.pi * np.arange(n) / n
    c, s = np.cos(th), np.sin(th)
    v = _path_values(cfg, _unit(p), tau, c, s)
    e = np.exp(0.5 * v)
    w = 2.0 * np.pi / n
    A = w * e.sum()
    return np.array([A - 1.0, w * (c * e).sum(), w * (s * e).sum()])


def chi_lambda(cfg: LinkingConfig, y, n: int | None = None) -> np.ndarray:
    p, tau = sphere_to_path(y)
    return chi_path(cfg, p, tau, n)


# ---------------------------------------------------------------------------
# Brouwer degree on S^2
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def icosphere(refinement: int) -> tuple[np.ndarray, np.ndarray]:
    """Vertices on the unit sphere and outward-oriented triangles of the
    icosahedron subdivided ``refinement`` times (``10 * 4^r + 2`` vertices)."""
    g = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [(-1, g, 0), (1, g, 0), (-1, -g, 0), (1, -g, 0),
             (0, -1, g), (0, 1, g), (0, -1, -g), (0, 1, -g),
             (g, 0, -1), (g, 0, 1), (-g, 0, -1), (-g, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    V = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(refinement):
        cache: dict[tuple[int, int], int] = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = V[i] + V[j]
                V.append(m / np.linalg.norm(m))
                cache[key] = len(V) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    V = np.array(V)
    F = np.array(faces, dtype=int)
    V.setflags(write=False)
    F.setflags(write=False)
    return V, F


def solid_angles(P: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Signed solid angle subtended at the origin by each triangle ``P[F]``
    (Van Oosterom and Strackee)."""
    a, b, c = P[F[:, 0]], P[F[:, 1]], P[F[:, 2]]
    la, lb, lc = (np.linalg.norm(x, axis=1) for x in (a, b, c))
    num = np.einsum("ij,ij->i", a, np.cross(b, c))
    den = (la * lb * lc + np.einsum("ij,ij->i", a, b) * lc
           + np.einsum("ij,ij->i", a, c) * lb + np.einsum("ij,ij->i", b, c) * la)
    return 2.0 * np.arctan2(num, den)


def winding_number(P: np.ndarray, F: np.ndarray) -> float:
    """Unrounded degree: total signed solid angle over ``4 pi``."""
    return float(solid_angles(P, F).sum() / (4.0 * math.pi))


@dataclass
class DegreeResult:
    degree: int
    min_chi_norm: float
    min_homotopy_norm: float
    refinement: int
    winding: float
    n_vertices: int
    admissible: bool
    s_values: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"degree": self.degree, "min_chi_norm": self.min_chi_norm,
                "min_homotopy_norm": self.min_homotopy_norm, "refinement": self.refinement}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _degree_from_images(P: np.ndarray, F: np.ndarray, vanish_tol: float) -> tuple[int, float, float]:
    norms = np.linalg.norm(P, axis=1)
    mn = float(norms.min())
    if mn <= vanish_tol:
        raise DegreeUndefined("map vanishes on the mesh")
    w = winding_number(P, F)
    return int(round(w)), w, mn


def degree_of_map(fn, refinement: int = 3, vanish_tol: float = 1e-12) -> DegreeResult:
    """Degree of a map ``S^2 -> R^3 \\ {0}`` given vertex-wise by ``fn(y)``.

    Examples: the identity has degree 1, the antipodal map ``y -> -y`` degree
    -1 (it reverses orientation on the even-dimensional sphere) and a constant
    map degree 0.
    """
    V, F = icosphere(refinement)
    P = np.array([np.asarray(fn(y), dtype=float) for y in V])
    deg, w, mn = _degree_from_images(P, F, vanish_tol)
    return DegreeResult(deg, mn, math.nan, refinement, w, len(V), True)


def degree_of_chi_lambda(model: CurvatureModel | None, cfg: LinkingConfig,
                         mesh_refinement: int = 3, max_refinement: int = 5,
                         n_s: int = 11, vanish_tol: float = 1e-12) -> DegreeResult:
    """Brouwer degree of ``chi o Lambda`` on an icosphere, with the straight-line
    homotopy ``H(y, s) = (1 - s) chi(Lambda(y)) + s y`` to the identity checked
    for zeros on the mesh at ``n_s`` equally spaced ``s``.

    The map only involves boundary integrals of explicit functions, evaluated
    with a dense trapezoid rule.  When ``model`` is given, the configuration's
    normalization shift is verified against it.  If the image comes within
    ``vanish_tol`` of the origin the mesh is refined, up to ``max_refinement``.
    """
    if mesh_refinement < 0:
        raise ValueError("mesh_refinement must be nonnegative")
    if model is not None:
        cfg.shifted(model)
    n = boundary_quadrature_size(cfg)
    s_grid = np.linspace(0.0, 1.0, n_s)
    ref = mesh_refinement
    while True:
        V, F = icosphere(ref)
        P = np.array([chi_lambda(cfg, y, n) for y in V])
        try:
            deg, w, mn = _degree_from_images(P, F, vanish_tol)
            break
        except DegreeUndefined:
            if ref >= max_refinement:
                raise DegreeUndefined("degree undefined at this resolution") from None
            ref += 1
    H = (1.0 - s_grid)[:, None, None] * P[None] + s_grid[:, None, None] * V[None]
    hmin = float(np.linalg.norm(H, axis=2).min())
    if abs(w - deg) > 1e-6:
        warnings.warn(f"winding sum {w} is not close to an integer", RuntimeWarning, stacklevel=2)
    return DegreeResult(deg, mn, hmin, ref, w, len(V), hmin > vanish_tol, list(s_grid))


# ---------------------------------------------------------------------------
# energy along the path
# ---------------------------------------------------------------------------


@dataclass
class PathSample:
    tau: float
    segment: str
    field_params: dict
    energy: float
    constraint: ConstraintState | None
    J_h: float = math.nan
    B_eps_h: float = math.nan
    bound: float = math.nan
    resolved: bool = True

    def to_dict(self) -> dict:
        d = {"tau": self.tau, "segment": self.segment, "field_params": dict(self.field_params),
             "energy": self.energy, "J_h": self.J_h, "B_eps_h": self.B_eps_h,
             "bound": self.bound, "resolved": self.resolved}
        d["constraint"] = self.constraint.to_dict() if self.constraint else None
        return d


@dataclass
class PathProfile:
    samples: list
    max_energy: float
    argmax_tau: float
    alpha: float
    beta: float
    r: float
    eps: float
    p: tuple[float, float]
    config: LinkingConfig
    grid: GridSpec

    def crossing_taus(self) -> list[float]:
        """Parameters where ``A - 1`` changes sign between consecutive samples
        (linear interpolation)."""
        out = []
        pts = [(s.tau, s.constraint.A - 1.0) for s in self.samples if s.constraint is not None]
        for (t0, f0), (t1, f1) in zip(pts, pts[1:]):
            if f0 == 0.0:
                out.append(t0)
            elif f0 * f1 < 0:
                out.append(t0 + (t1 - t0) * f0 / (f0 - f1))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tau", "segment", "energy", "J_h", "B_eps_h", "A", "B1", "B2"])
        for s in self.samples:
            c = s.constraint
            A, B1, B2 = (c.A, c.B[0], c.B[1]) if c else (math.nan,) * 3
            w.writerow([repr(float(x)) if not isinstance(x, str) else x
                        for x in (s.tau, s.segment, s.energy, s.J_h, s.B_eps_h, A, B1, B2)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"max_energy": self.max_energy, "argmax_tau": self.argmax_tau,
                "alpha": self.alpha, "beta": self.beta, "r": self.r, "eps": self.eps,
                "p": list(self.p), "config": self.config.to_dict(), "grid": self.grid.to_dict(),
                "samples": [s.to_dict() for s in self.samples]}


def far_from_one_margin(model: CurvatureModel, eps: float, hh0: float) -> float:
    """``r = min( min h_eps - hh0, min (K_eps + 1) )`` over the nodes."""
    c = perturb(model, eps)
    return float(min(np.min(c.h_eps.values) - hh0, np.min(c.K_eps.values) + 1.0))


def path_energy_profile(model: CurvatureModel, eps: float, cfg: LinkingConfig, p=(1.0, 0.0),
                        n_samples: int = 31, grid: GridSpec | None = None) -> PathProfile:
    """Evaluate ``I_eps``, ``J_hh``, ``B_{eps,hh}`` and the boundary constraint
    state along ``gamma_p`` for the shifted model.

    ``bound`` is the surrogate ``alpha log(1 - lam^2) - beta/(phi^2 - 1)``
    with ``alpha = 8 pi delta/(2 + delta)`` and ``beta = 8 pi r``.  Samples
    whose exponential overflows are marked unresolved and left out of the max.
    """
    p = _unit(p)
    grid = grid or resolving_grid(1.0 - cfg.sigma)
    m = cfg.shifted(model).on_grid(grid)
    coeffs = perturb(m, eps)
    r = far_from_one_margin(m, eps, cfg.hh0)
    beta = 8.0 * math.pi * r
    samples = []
    for tau in np.linspace(0.0, 1.0, n_samples):
        seg, prm = path_params(cfg, float(tau))
        bound = cfg.alpha * math.log(1.0 - prm["lam"] ** 2) - beta / (prm["phi"] ** 2 - 1.0) \
            if prm["lam"] < 1.0 else math.nan
        u = gamma_path(cfg, p, float(tau), grid)
        try:
            e = energy(u, coeffs, check=False).total
            J = J_functional(u, cfg.hh, check=False)
            B = B_remainder(u, coeffs, cfg.hh)
            cs = constraint_state(u)
            samples.append(PathSample(float(tau), seg, prm, e, cs, J, B, bound))
        except ExponentialRangeError as err:
            warnings.warn(f"path sample at tau={tau:.4g} unresolved: {err}", RuntimeWarning, stacklevel=2)
            samples.append(PathSample(float(tau), seg, prm, math.nan, None, bound=bound, resolved=False))
    good = [s for s in samples if s.resolved]
    if not good:
        raise LinkingError("no resolved path samples")
    top = max(good, key=lambda s: s.energy)
    return PathProfile(samples, top.energy, top.tau, cfg.alpha, beta, r, eps, p, cfg, grid)


def matched_bubble_energy(phi: float) -> float:
    """``J_hh`` at ``Psi(., phi, lam)`` with ``hh`` matched to ``phi``."""
    return -8.0 * math.pi * (1.0 + math.log(phi / 2.0))


__all__ = [
    "LinkingConfig", "LinkingError", "DegreeUndefined", "PathSample", "PathProfile", "DegreeResult",
    "normalization_shift", "test_functions", "path_params", "gamma_path", "sphere_to_path",
    "lambda_map", "chi_path", "chi_lambda", "boundary_quadrature_size", "icosphere",
    "solid_angles", "winding_number", "degree_of_map", "degree_of_chi_lambda",
    "far_from_one_margin", "path_energy_profile", "matched_bubble_energy",
]
