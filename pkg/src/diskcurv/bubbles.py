"""Explicit solutions of the constant-curvature problem and Moebius transport.

For constant curvatures ``K = k < 0`` and ``h = hh`` with ``hh**2 + k > 0``,
every

    u_a(x) = 2 log( 2 phi (1 - |a|^2) / (phi^2 |1 - conj(a) x|^2 + k |x - a|^2) ),
    phi = hh + sqrt(hh^2 + k),

solves ``-Lap u = 2 k e^u`` in the disk and ``d_nu u + 2 = 2 hh e^{u/2}`` on
the circle.  With ``k = -1`` the family is written ``Psi(x, phi, lam)`` for
``a = (lam, 0)``, and ``hh = (phi + 1/phi) / 2``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .spectral import (
    DiskField,
    GridSpec,
    boundary_trace,
    laplacian,
    quad_circle,
    quad_disk,
    spectral_tail,
)


class InvalidBubble(ValueError):
    pass


def phi_from_hh(hh: float, k: float = -1.0) -> float:
    disc = hh * hh + k
    if disc <= 0:
        raise InvalidBubble(f"invalid bubble parameters: hh^2 + k = {disc} <= 0")
    return hh + math.sqrt(disc)


def hh_from_phi(phi: float, k: float = -1.0) -> float:
    """Inverse of :func:`phi_from_hh`; ``(phi + 1/phi)/2`` when ``k = -1``."""
    return (phi * phi - k) / (2.0 * phi)


@dataclass(frozen=True)
class BubbleParams:
    a: tuple[float, float] = (0.0, 0.0)
    phi: float = 2.0 + math.sqrt(3.0)
    k: float = -1.0
    hh: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "a", (float(self.a[0]), float(self.a[1])))
        if math.hypot(*self.a) >= 1.0:
            raise InvalidBubble("invalid bubble parameters: |a| must be < 1")
        if not self.k < 0:
            raise InvalidBubble("invalid bubble parameters: k must be negative")
        if self.phi * self.phi + self.k <= 0:
            raise InvalidBubble("invalid bubble parameters: phi^2 + k must be positive")

    @classmethod
    def from_hh(cls, hh: float, a=(0.0, 0.0), k: float = -1.0) -> "BubbleParams":
        return cls(a=tuple(a), phi=phi_from_hh(hh, k), k=k, hh=hh)

    @classmethod
    def from_phi(cls, phi: float, a=(0.0, 0.0), k: float = -1.0) -> "BubbleParams":
        return cls(a=tuple(a), phi=phi, k=k, hh=hh_from_phi(phi, k))

    @property
    def a_complex(self) -> complex:
        return complex(*self.a)

    def to_dict(self) -> dict:
        return {"a": list(self.a), "phi": self.phi, "k": self.k, "hh": self.hh}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "BubbleParams":
        return cls(a=tuple(doc["a"]), phi=doc["phi"], k=doc["k"], hh=doc["hh"])


def bubble_values(p: BubbleParams, x1, x2) -> np.ndarray:
    a = p.a_complex
    z = np.asarray(x1) + 1j * np.asarray(x2)
    den = p.phi**2 * np.abs(1.0 - np.conj(a) * z) ** 2 + p.k * np.abs(z - a) ** 2
    if np.any(den <= 0):
        raise InvalidBubble("invalid bubble parameters: denominator not positive on the disk")
    return 2.0 * np.log(2.0 * p.phi * (1.0 - abs(a) ** 2) / den)


def bubble_field(p: BubbleParams, grid: GridSpec, dtype=np.float64) -> DiskField:
    """Collocation values of ``u_a``; ``dtype=np.longdouble`` evaluates the
    closed form in extended precision, which keeps rounding noise in the high
    angular modes out of derivatives near the centre."""
    x1, x2 = grid.nodes(dtype)
    return DiskField(grid, bubble_values(p, x1, x2))


def psi_params(phi: float, lam: float) -> BubbleParams:
    if phi <= 1:
        raise InvalidBubble("invalid bubble parameters: phi must exceed 1")
    if not 0 <= lam < 1:
        raise InvalidBubble("invalid bubble parameters: lambda must lie in [0, 1)")
    return BubbleParams.from_phi(phi, a=(lam, 0.0), k=-1.0)


def psi_field(phi: float, lam: float, grid: GridSpec, dtype=np.float64) -> DiskField:
    return bubble_field(psi_params(phi, lam), grid, dtype)


def boundary_mass(phi: float) -> float:
    """``int_{dD} e^{Psi/2} = 2 pi / sqrt(hh^2 - 1) = 4 pi phi / (phi^2 - 1)``."""
    return 4.0 * math.pi * phi / (phi * phi - 1.0)


def interior_mass(phi: float) -> float:
    """``int_D e^{Psi} = 2 pi (hh / sqrt(hh^2 - 1) - 1) = 4 pi / (phi^2 - 1)``."""
    return 4.0 * math.pi / (phi * phi - 1.0)


def bubble_energy(phi: float, hh: float | None = None) -> float:
    """Closed-form value of

        J_hh(u) = int_D (|grad u|^2 / 2 + 2 e^u) + int_{dD} (2u - 4 hh e^{u/2})

    at ``Psi(., phi, lam)`` (independent of ``lam``).  The general value is
    ``16 pi (1 - hh phi)/(phi^2 - 1) + 8 pi log(2/phi)``; with ``hh`` left at
    its matched value ``(phi + 1/phi)/2`` it equals ``-8 pi (1 + log(phi/2))``.
    """
    if phi <= 1:
        raise InvalidBubble("phi must exceed 1")
    if hh is None:
        return -8.0 * math.pi * (1.0 + math.log(phi / 2.0))
    return 16.0 * math.pi * (1.0 - hh * phi) / (phi * phi - 1.0) + 8.0 * math.pi * math.log(2.0 / phi)


@dataclass(frozen=True)
class MoebiusMap:
    """``f_a(z) = (a + z) / (1 + conj(a) z)`` on the unit disk."""

    a: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "a", (float(self.a[0]), float(self.a[1])))
        if math.hypot(*self.a) >= 1.0:
            raise ValueError("Moebius parameter must satisfy |a| < 1")

    @property
    def ac(self) -> complex:
        return complex(*self.a)

    def __call__(self, z):
        a = self.ac
        return (a + z) / (1.0 + np.conj(a) * z)

    def derivative(self, z):
        a = self.ac
        return (1.0 - abs(a) ** 2) / (1.0 + np.conj(a) * z) ** 2

    def inverse(self) -> "MoebiusMap":
        return MoebiusMap((-self.a[0], -self.a[1]))


def moebius_pullback(u: DiskField, a) -> DiskField:
    """``v(x) = u(f_a(x)) + 2 log|f_a'(x)|`` by spectral interpolation of ``u``."""
    f = MoebiusMap(tuple(a))
    grid = u.grid
    z = grid.x1 + 1j * grid.x2
    w = f(z)
    # keep mapped boundary nodes exactly on the circle
    w[0] = w[0] / np.abs(w[0])
    vals = u.evaluate(w.real, w.imag) + 2.0 * np.log(np.abs(f.derivative(z)))
    return DiskField(grid, vals)


def kernel_fields(p: BubbleParams, grid: GridSpec) -> tuple[DiskField, DiskField]:
    """``Z_j = x_j / (phi^2 + k |x|^2)``, j = 1, 2."""
    den = p.phi**2 + p.k * (grid.x1**2 + grid.x2**2)
    return DiskField(grid, grid.x1 / den), DiskField(grid, grid.x2 / den)


def family_tangents(p: BubbleParams, grid: GridSpec, step: float = 1e-5):
    """Central differences of ``u_a`` with respect to ``a_1`` and ``a_2``."""
    out = []
    for e in ((step, 0.0), (0.0, step)):
        plus = BubbleParams((p.a[0] + e[0], p.a[1] + e[1]), p.phi, p.k, p.hh)
        minus = BubbleParams((p.a[0] - e[0], p.a[1] - e[1]), p.phi, p.k, p.hh)
        out.append((bubble_field(plus, grid) - bubble_field(minus, grid)) / (2.0 * step))
    return tuple(out)


def resolving_grid(a_norm: float, base: GridSpec | None = None) -> GridSpec:
    """A grid on which a bubble centred at distance ``a_norm`` from the origin is
    resolved: angular spacing well below ``1 - |a|`` and a radial count that
    grows logarithmically with the concentration."""
    base = base or GridSpec()
    gap = max(1.0 - a_norm, 1e-12)
    n_theta = base.n_theta
    while n_theta < 32.0 / gap:
        n_theta *= 2
    n_r = base.n_r
    target = int(math.ceil(48 + 24 * math.log10(1.0 / gap)))
    while n_r < target:
        n_r *= 2
    return GridSpec(n_theta, n_r, base.r_map)


def bubble_pde_residual(p: BubbleParams, grid: GridSpec) -> float:
    """Sup over interior nodes of ``|-Lap u_a - 2 k e^{u_a}|`` on ``grid``.

    The bubble is sampled in extended precision so that the value measures
    angular and radial truncation rather than float64 cancellation.
    """
    u = bubble_field(p, grid, dtype=np.longdouble)
    res = -laplacian(u, check=False).values - 2.0 * p.k * np.exp(u.values)
    return float(np.max(np.abs(res[1:])))


def resolvable_a_max(grid: GridSpec, hh: float = 2.0, tol: float = 1e-4,
                     residual_tol: float = 1e-6) -> float:
    """Largest ``|a|`` (bisection, to 1e-4) for which the bubble is resolved on ``grid``.

    Resolved means the spectral tail fraction stays below ``tol`` and the
    collocated interior residual of the exact bubble stays below
    ``residual_tol``. The tail fraction alone is far too lenient: the
    Laplacian amplifies mode ``k`` by ``k**2``.
    """
    lo, hi = 0.0, 1.0 - 1e-9
    for _ in range(30):
        mid = 0.5 * (lo + hi)
        p = BubbleParams.from_hh(hh, (mid, 0.0))
        ok = spectral_tail(bubble_field(p, grid)) <= tol and bubble_pde_residual(p, grid) <= residual_tol
        if ok:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-4:
            break
    return lo


def appendix_limits(a: float, phi: float, k: float = -1.0,
                    grid: GridSpec | None = None) -> tuple[float, float]:
    """``(int_D x1 u_a, int_{dD} x1 u_a)`` for ``a = (a, 0)``, on a grid that
    resolves the concentration unless one is supplied."""
    grid = grid or resolving_grid(abs(a))
    p = BubbleParams(a=(a, 0.0), phi=phi, k=k, hh=hh_from_phi(phi, k))
    u = bubble_field(p, grid)
    x1 = DiskField(grid, grid.x1)
    interior = quad_disk(x1 * u)
    bd = quad_circle(boundary_trace(x1 * u))
    return interior, bd


def bubble_masses(p: BubbleParams, grid: GridSpec) -> tuple[float, float]:
    """Quadrature values of ``(int_D e^u, int_{dD} e^{u/2})``."""
    u = bubble_field(p, grid)
    return quad_disk(u.map(np.exp)), quad_circle(boundary_trace(u.map(lambda v: np.exp(v / 2))))
