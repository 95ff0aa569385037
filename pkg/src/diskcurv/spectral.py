"""Polar spectral discretization of the closed unit disk.

Fields are stored as collocation values on a tensor grid ``(r_i, theta_j)``
with ``r_0 = 1`` (the boundary circle) and radial nodes in ``(0, 1]``.  In
angle the representation is Fourier; in radius every angular mode ``k`` is a
polynomial of parity ``(-1)**k`` on the symmetric node set ``{+r_i, -r_i}``,
which is the usual way of removing the coordinate singularity at the origin
without placing a node there.

Boundary data live in :class:`BoundaryFunction`, a truncated Fourier series
on the unit circle.
"""

from __future__ import annotations

import io
import json
import warnings
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
from scipy.special import roots_jacobi

R_MAPS = ("chebyshev_extrema", "gauss_radau")
TAIL_TOL = 1e-6
# longdouble is wider than float64 on x86-64 Linux; elsewhere it may not be
EXTENDED = np.finfo(np.longdouble).eps < np.finfo(np.float64).eps
FLOAT_TYPES = (np.dtype(np.float64), np.dtype(np.longdouble))


class UnderResolvedWarning(UserWarning):
    """Raised (as a warning) when a field's spectral tail is not negligible."""


class NonFiniteFieldError(ValueError):
    pass


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Collocation grid on the closed unit disk.

    Parameters
    ----------
    n_theta : int
        Number of equispaced angular nodes, even and at least 8.
    n_r : int
        Number of radial nodes in ``(0, 1]``, at least 4.
    r_map : str
        ``"gauss_radau"`` (Radau nodes in ``s = r**2``, endpoint ``r = 1``)
        or ``"chebyshev_extrema"`` (positive half of an even-sized set of
        Chebyshev extrema on ``[-1, 1]``).
    """

    n_theta: int = 128
    n_r: int = 64
    r_map: str = "gauss_radau"

    def __post_init__(self):
        if int(self.n_theta) != self.n_theta or self.n_theta < 8 or self.n_theta % 2:
            raise ValueError(f"n_theta must be an even integer >= 8, got {self.n_theta}")
        if int(self.n_r) != self.n_r or self.n_r < 4:
            raise ValueError(f"n_r must be an integer >= 4, got {self.n_r}")
        if self.r_map not in R_MAPS:
            raise ValueError(f"unknown r_map {self.r_map!r}; expected one of {R_MAPS}")

    # -- geometry ----------------------------------------------------------
    @property
    def ops(self) -> "RadialOps":
        return radial_ops(self.n_r, self.r_map)

    @property
    def r(self) -> np.ndarray:
        return self.ops.r

    @property
    def theta(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n_theta) / self.n_theta

    @property
    def k(self) -> np.ndarray:
        """Nonnegative angular wavenumbers of the real FFT."""
        return np.arange(self.n_theta // 2 + 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_r, self.n_theta)

    @property
    def x1(self) -> np.ndarray:
        return np.outer(self.r, np.cos(self.theta))

    @property
    def x2(self) -> np.ndarray:
        return np.outer(self.r, np.sin(self.theta))

    def nodes(self, dtype=np.float64) -> tuple[np.ndarray, np.ndarray]:
        """Cartesian node coordinates ``(x1, x2)`` with the angles and their
        cosines computed in ``dtype`` (useful for extended-precision samples)."""
        th = 2 * np.pi * np.arange(self.n_theta).astype(dtype) / self.n_theta
        if dtype == np.longdouble:
            th = 2 * np.longdouble("3.14159265358979323846264338327950288") \
                * np.arange(self.n_theta).astype(dtype) / self.n_theta
        r = self.r.astype(dtype)
        return np.outer(r, np.cos(th)), np.outer(r, np.sin(th))

    @property
    def weights(self) -> np.ndarray:
        """Quadrature weights for ``int_D f dx`` at the nodes (Jacobian included)."""
        return np.outer(self.ops.w, np.full(self.n_theta, 2.0 * np.pi / self.n_theta))

    def refined(self, factor: int = 2) -> "GridSpec":
        return GridSpec(self.n_theta * factor, self.n_r * factor, self.r_map)

    def to_dict(self) -> dict:
        return {"n_theta": self.n_theta, "n_r": self.n_r, "r_map": self.r_map}


def _barycentric_weights(x: np.ndarray) -> np.ndarray:
    # log-magnitude accumulation: plain products under/overflow past ~100 nodes
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    sign = np.prod(np.sign(diff), axis=1)
    logmag = np.sum(np.log(np.abs(diff)), axis=1)
    logmag -= logmag.min()
    return sign * np.exp(-logmag)


def _diff_matrices(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First and second barycentric differentiation matrices on nodes ``x``."""
    w = _barycentric_weights(x)
    dx = x[:, None] - x[None, :]
    np.fill_diagonal(dx, 1.0)
    D = (w[None, :] / w[:, None]) / dx
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    D2 = 2.0 * D * (np.diag(D)[:, None] - 1.0 / dx)
    np.fill_diagonal(D2, 0.0)
    np.fill_diagonal(D2, -D2.sum(axis=1))
    return D, D2


def barycentric_matrix(nodes: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Interpolation matrix from values at ``nodes`` to points ``x``."""
    w = _barycentric_weights(nodes)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    diff = x[:, None] - nodes[None, :]
    exact = diff == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = w[None, :] / diff
        B = terms / terms.sum(axis=1, keepdims=True)
    hit = exact.any(axis=1)
    if hit.any():
        B[hit] = exact[hit].astype(float)
    return B


@dataclass(frozen=True)
class RadialOps:
    r: np.ndarray
    w: np.ndarray
    D: dict
    D2: dict
    full_nodes: np.ndarray
    cheb_analysis: np.ndarray = field(repr=False)
    D_ext: dict = field(default=None, repr=False)
    D2_ext: dict = field(default=None, repr=False)

    def mats(self, dtype, second: bool = False) -> dict:
        """Parity-folded first or second derivative matrices in the precision
        matching ``dtype`` (extended precision for ``longdouble`` data)."""
        ext = np.dtype(dtype) in (np.dtype(np.longdouble), np.dtype(np.clongdouble)) and EXTENDED
        if second:
            return self.D2_ext if ext else self.D2
        return self.D_ext if ext else self.D

    def fold(self, A: np.ndarray, parity: int) -> np.ndarray:
        """Restrict a matrix on the symmetric node set to parity-``parity`` data."""
        n = self.r.size
        return A[..., :n] + parity * A[..., n:]


@lru_cache(maxsize=32)
def radial_ops(n_r: int, r_map: str) -> RadialOps:
    if r_map == "chebyshev_extrema":
        m = 2 * n_r
        r = np.cos(np.pi * np.arange(n_r) / (m - 1))
    else:
        # Radau rule on s = r^2 in [0, 1] with fixed endpoint s = 1
        t, _ = roots_jacobi(n_r - 1, 1.0, 0.0)
        s = np.concatenate(([1.0], np.sort((1.0 + t) / 2.0)[::-1]))
        r = np.sqrt(s)
    full = np.concatenate((r, -r))
    Dfull, D2full = _diff_matrices(full)
    n = n_r
    D = {p: Dfull[:n, :n] + p * Dfull[:n, n:] for p in (1, -1)}
    D2 = {p: D2full[:n, :n] + p * D2full[:n, n:] for p in (1, -1)}

    # interpolatory weights for int_0^1 g(r) r dr = 1/2 int_0^1 G(s) ds, g even
    s = r**2
    V = np.polynomial.legendre.legvander(2.0 * s - 1.0, n_r - 1)
    moments = np.zeros(n_r)
    moments[0] = 1.0
    w = 0.5 * np.linalg.solve(V.T, moments)

    # Chebyshev coefficients of the symmetric extension (for tail estimates)
    Vc = np.polynomial.chebyshev.chebvander(full, 2 * n_r - 1)
    cheb_analysis = np.linalg.inv(Vc)

    fl = full.astype(np.longdouble)
    Dl, D2l = _diff_matrices(fl)
    D_ext = {p: Dl[:n, :n] + p * Dl[:n, n:] for p in (1, -1)}
    D2_ext = {p: D2l[:n, :n] + p * D2l[:n, n:] for p in (1, -1)}
    return RadialOps(r=r, w=w, D=D, D2=D2, full_nodes=full, cheb_analysis=cheb_analysis,
                     D_ext=D_ext, D2_ext=D2_ext)


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------


def _modes(values: np.ndarray) -> np.ndarray:
    return np.fft.rfft(values, axis=-1) / values.shape[-1]


def _synth(coeffs: np.ndarray, n_theta: int) -> np.ndarray:
    return np.fft.irfft(coeffs * n_theta, n=n_theta, axis=-1)


def _per_parity(C: np.ndarray, mats: dict) -> np.ndarray:
    out = np.empty(C.shape, dtype=np.result_type(C, mats[1]))
    out[..., 0::2] = mats[1] @ C[..., 0::2]
    out[..., 1::2] = mats[-1] @ C[..., 1::2]
    return out


@dataclass(frozen=True, eq=False)
class DiskField:
    """Scalar field on the closed unit disk, stored as collocation values.

    ``values`` has shape ``(n_r, n_theta)``; row 0 is the boundary circle.
    """

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.dtype not in FLOAT_TYPES:
            vals = vals.astype(np.float64)
        if vals.shape != self.grid.shape:
            raise ValueError(f"values shape {vals.shape} does not match grid {self.grid.shape}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: GridSpec, fn) -> "DiskField":
        """Sample ``fn(x1, x2)`` at the collocation nodes."""
        vals = np.broadcast_to(np.asarray(fn(grid.x1, grid.x2), dtype=float), grid.shape)
        return cls(grid, np.array(vals))

    @classmethod
    def constant(cls, grid: GridSpec, c: float) -> "DiskField":
        return cls(grid, np.full(grid.shape, float(c)))

    @cached_property
    def coeffs(self) -> np.ndarray:
        """Angular Fourier coefficients per radial node, shape ``(n_r, n_theta//2+1)``."""
        return _modes(self.values)

    # arithmetic keeps the grid; only what the rest of the package needs
    def _wrap(self, vals) -> "DiskField":
        return DiskField(self.grid, vals)

    def _other(self, other):
        if isinstance(other, DiskField):
            if other.grid != self.grid:
                raise ValueError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return self._wrap(self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self._wrap(self.values - self._other(other))

    def __rsub__(self, other):
        return self._wrap(self._other(other) - self.values)

    def __mul__(self, other):
        return self._wrap(self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._wrap(self.values / self._other(other))

    def __neg__(self):
        return self._wrap(-self.values)

    def map(self, fn) -> "DiskField":
        return self._wrap(fn(self.values))

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    @property
    def extended(self) -> bool:
        return self.values.dtype == np.longdouble and EXTENDED

    def astype(self, dtype) -> "DiskField":
        return DiskField(self.grid, self.values.astype(dtype))

    def rotated(self, angle: float) -> "DiskField":
        """Field ``x -> f(R_{-angle} x)``, i.e. the data rotated by ``angle``."""
        k = self.grid.k
        C = self.coeffs * np.exp(-1j * k * angle)
        return self._wrap(_synth(C, self.grid.n_theta))

    def evaluate(self, x1, x2) -> np.ndarray:
        """Spectral interpolation at arbitrary points of the closed disk."""
        x1 = np.asarray(x1, dtype=float)
        shape = x1.shape
        x1 = x1.ravel()
        x2 = np.asarray(x2, dtype=float).ravel()
        rho = np.hypot(x1, x2)
        th = np.arctan2(x2, x1)
        ops = self.grid.ops
        B = barycentric_matrix(ops.full_nodes, rho)
        C = self.coeffs
        k = self.grid.k
        n = self.grid.n_theta
        acc = np.zeros(rho.size, dtype=complex)
        for parity, sl in ((1, slice(0, None, 2)), (-1, slice(1, None, 2))):
            Bp = ops.fold(B, parity)
            radial = Bp @ C[:, sl]
            kk = k[sl]
            fac = np.where((kk == 0) | (kk == n // 2), 1.0, 2.0)
            phase = np.exp(1j * np.outer(th, kk))
            if n // 2 in kk:
                # real (cosine) reading of the Nyquist term off-grid
                nyq = kk == n // 2
                phase[:, nyq] = np.cos(np.outer(th, kk[nyq]))
            acc += np.sum(radial * phase * fac, axis=1)
        return acc.real.reshape(shape)

    # -- serialization -------------------------------------------------------
    def to_json(self) -> str:
        return json.dumps({"grid": self.grid.to_dict(), "values": self.values.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "DiskField":
        doc = json.loads(text)
        return cls(GridSpec(**doc["grid"]), np.asarray(doc["values"], dtype=float))

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        np.savez(buf, values=self.values, n_theta=self.grid.n_theta, n_r=self.grid.n_r,
                 r_map=np.array(self.grid.r_map))
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "DiskField":
        with np.load(io.BytesIO(blob)) as data:
            grid = GridSpec(int(data["n_theta"]), int(data["n_r"]), str(data["r_map"]))
            return cls(grid, data["values"].copy())


@dataclass(frozen=True, eq=False)
class BoundaryFunction:
    """Real function on the unit circle as a truncated Fourier series.

    ``coeffs[k]`` for ``k = 0..n/2`` are the coefficients of ``exp(i k theta)``;
    negative wavenumbers are implied by conjugate symmetry.
    """

    coeffs: np.ndarray
    n: int

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != (self.n // 2 + 1,):
            raise ValueError("coefficient length must be n//2 + 1")
        c = c.copy()
        c[0] = c[0].real
        c[-1] = c[-1].real
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def from_values(cls, values) -> "BoundaryFunction":
        v = np.asarray(values, dtype=float)
        return cls(_modes(v), v.size)

    @classmethod
    def from_function(cls, n: int, fn) -> "BoundaryFunction":
        """Sample ``fn(theta)`` at ``n`` equispaced angles."""
        th = 2.0 * np.pi * np.arange(n) / n
        return cls.from_values(np.broadcast_to(np.asarray(fn(th), dtype=float), th.shape))

    @classmethod
    def constant(cls, n: int, c: float) -> "BoundaryFunction":
        return cls.from_values(np.full(n, float(c)))

    @property
    def theta(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n) / self.n

    @property
    def k(self) -> np.ndarray:
        return np.arange(self.n // 2 + 1)

    @cached_property
    def values(self) -> np.ndarray:
        v = _synth(self.coeffs, self.n)
        v.setflags(write=False)
        return v

    def full_coeffs(self) -> np.ndarray:
        """Coefficients for ``k = -n/2..n/2`` (conjugate symmetric); the Nyquist
        coefficient is split evenly between ``k = -n/2`` and ``k = n/2``."""
        pos = self.coeffs.copy()
        if self.n % 2 == 0:
            pos[-1] *= 0.5
        return np.concatenate((np.conj(pos[:0:-1]), pos))

    def evaluate(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        k = self.k
        fac = np.where((k == 0) | (k == self.n // 2), 1.0, 2.0)
        phase = np.exp(1j * np.multiply.outer(theta, k))
        phase[..., -1] = np.cos(np.multiply.outer(theta, k[-1:]))[..., 0]
        return np.real(phase @ (self.coeffs * fac))

    def _wrap(self, vals) -> "BoundaryFunction":
        return BoundaryFunction.from_values(vals)

    def _other(self, other):
        if isinstance(other, BoundaryFunction):
            if other.n != self.n:
                raise ValueError("boundary functions have different resolutions")
            return other.values
        return other

    def __add__(self, other):
        return self._wrap(self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self._wrap(self.values - self._other(other))

    def __rsub__(self, other):
        return self._wrap(self._other(other) - self.values)

    def __mul__(self, other):
        return self._wrap(self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._wrap(self.values / self._other(other))

    def __neg__(self):
        return self._wrap(-self.values)

    def map(self, fn) -> "BoundaryFunction":
        return self._wrap(fn(self.values))

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def rotated(self, angle: float) -> "BoundaryFunction":
        return BoundaryFunction(self.coeffs * np.exp(-1j * self.k * angle), self.n)


# ---------------------------------------------------------------------------
# resolution checks
# ---------------------------------------------------------------------------


def spectral_tail(f: DiskField) -> float:
    """Fraction of spectral energy in the top third of angular or radial modes."""
    grid = f.grid
    C = f.coeffs
    w = grid.ops.w
    per_k = w @ (np.abs(C) ** 2)
    per_k[1:] *= 2.0
    total = per_k.sum()
    if total <= 1e-300:
        return 0.0
    kcut = (2 * (grid.n_theta // 2)) // 3
    ang_tail = per_k[kcut + 1 :].sum() / total

    ops = grid.ops
    n = grid.n_r
    full_even = np.concatenate((C[:, 0::2], C[:, 0::2]), axis=0)
    full_odd = np.concatenate((C[:, 1::2], -C[:, 1::2]), axis=0)
    cheb = np.concatenate((ops.cheb_analysis @ full_even, ops.cheb_analysis @ full_odd), axis=1)
    energy = np.abs(cheb) ** 2
    rad_total = energy.sum()
    rcut = (2 * (2 * n)) // 3
    rad_tail = energy[rcut:].sum() / rad_total if rad_total > 0 else 0.0
    return float(max(ang_tail, rad_tail))


def check_resolved(f: DiskField, what: str = "field", tol: float = TAIL_TOL) -> bool:
    tail = spectral_tail(f)
    if tail > tol:
        warnings.warn(
            f"{what} is under-resolved: spectral tail fraction {tail:.2e} > {tol:.0e}",
            UnderResolvedWarning,
            stacklevel=3,
        )
        return False
    return True


def center_mode_defect(f: DiskField) -> float:
    """Largest |f_k(0)| over angular modes k >= 1 (zero for a single-valued field)."""
    ops = f.grid.ops
    B = barycentric_matrix(ops.full_nodes, np.array([0.0]))
    vals = ops.fold(B, 1) @ f.coeffs[:, 2::2]
    return float(np.max(np.abs(vals))) if vals.size else 0.0


def _require_finite(values, what="field"):
    if not np.all(np.isfinite(values)):
        raise NonFiniteFieldError(f"non-finite {what}")


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------


def quad_disk(f: DiskField) -> float:
    """``int_D f dx`` with the polar Jacobian; spectrally accurate for smooth f."""
    _require_finite(f.values)
    return float(np.sum(f.grid.weights * f.values))


def quad_circle(g: BoundaryFunction) -> float:
    """``int_{dD} g ds`` = 2 pi c_0."""
    _require_finite(g.coeffs, "boundary data")
    return float(2.0 * np.pi * g.coeffs[0].real)


# ---------------------------------------------------------------------------
# differential operators
# ---------------------------------------------------------------------------


def radial_derivative(f: DiskField) -> DiskField:
    C = _per_parity(f.coeffs, f.grid.ops.mats(f.values.dtype))
    return DiskField(f.grid, _synth(C, f.grid.n_theta))


def angular_derivative(f: DiskField) -> DiskField:
    k = f.grid.k.astype(f.values.dtype)
    k[-1] = 0
    return DiskField(f.grid, _synth(1j * k * f.coeffs, f.grid.n_theta))


def gradient(f: DiskField, check: bool = True) -> tuple[DiskField, DiskField]:
    """Cartesian components of the gradient."""
    if check:
        check_resolved(f, "gradient input")
    grid = f.grid
    fr = radial_derivative(f).values
    ft = angular_derivative(f).values / grid.r[:, None]
    c, s = np.cos(grid.theta)[None, :], np.sin(grid.theta)[None, :]
    return DiskField(grid, c * fr - s * ft), DiskField(grid, s * fr + c * ft)


def grad_sq(f: DiskField, check: bool = True) -> DiskField:
    """``|grad f|^2`` evaluated in polar form."""
    if check:
        check_resolved(f, "gradient input")
    fr = radial_derivative(f).values
    ft = angular_derivative(f).values / f.grid.r[:, None]
    return DiskField(f.grid, fr**2 + ft**2)


def _laplacian_modes(C: np.ndarray, grid: GridSpec) -> np.ndarray:
    ops = grid.ops
    real = C.real.dtype
    r = grid.r.astype(real)[:, None]
    k2 = (grid.k.astype(real) ** 2)[None, :]
    return (_per_parity(C, ops.mats(C.dtype, second=True)) + _per_parity(C, ops.mats(C.dtype)) / r
            - k2 * C / r**2)


def laplacian(f: DiskField, check: bool = True) -> DiskField:
    if check:
        check_resolved(f, "laplacian input")
    return DiskField(f.grid, _synth(_laplacian_modes(f.coeffs, f.grid), f.grid.n_theta))


def boundary_trace(f: DiskField) -> BoundaryFunction:
    return BoundaryFunction(f.coeffs[0].copy(), f.grid.n_theta)


def normal_deriv(f: DiskField, check: bool = True) -> BoundaryFunction:
    """Outward normal derivative ``d/dr`` at ``r = 1``."""
    if check:
        check_resolved(f, "normal derivative input")
    C = f.coeffs
    D = f.grid.ops.mats(C.dtype)
    out = np.empty(C.shape[1], dtype=C.dtype)
    out[0::2] = D[1][0] @ C[:, 0::2]
    out[1::2] = D[-1][0] @ C[:, 1::2]
    return BoundaryFunction(out, f.grid.n_theta)


def tangential_deriv(g: BoundaryFunction) -> BoundaryFunction:
    """Derivative along ``tau = (-x2, x1)``, i.e. d/dtheta on the circle."""
    k = g.k.astype(float)
    k[-1] = 0.0
    return BoundaryFunction(1j * k * g.coeffs, g.n)


def harmonic_extension(g: BoundaryFunction, grid: GridSpec | None = None) -> DiskField:
    """Harmonic function with trace ``g`` (mode ``k`` carries ``r**|k|``)."""
    if grid is None:
        grid = GridSpec(n_theta=g.n)
    if grid.n_theta != g.n:
        raise ValueError("grid angular resolution must match the boundary data")
    C = np.power.outer(grid.r, g.k.astype(float)) * g.coeffs[None, :]
    return DiskField(grid, _synth(C, grid.n_theta))


def dtn(g: BoundaryFunction) -> BoundaryFunction:
    """Dirichlet-to-Neumann map (half-Laplacian): multiplier ``|k|``."""
    return BoundaryFunction(g.k * g.coeffs, g.n)


def holder_quotient(f: DiskField, alpha: float, chunk: int = 2048) -> float:
    """Grid Hoelder quotient ``max |f(x)-f(y)| / |x-y|**alpha`` over node pairs.

    A finite proxy only; it is not a norm equivalent of C^{0,alpha}.
    """
    x = np.stack((f.grid.x1.ravel(), f.grid.x2.ravel()), axis=1)
    v = f.values.ravel()
    best = 0.0
    for start in range(0, v.size, chunk):
        xs = x[start : start + chunk]
        d = np.sqrt(((xs[:, None, :] - x[None, :, :]) ** 2).sum(-1))
        dv = np.abs(v[start : start + chunk, None] - v[None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(d > 0, dv / d**alpha, 0.0)
        best = max(best, float(q.max()))
    return best
