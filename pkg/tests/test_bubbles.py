from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diskcurv.bubbles import (
    BubbleParams,
    InvalidBubble,
    MoebiusMap,
    appendix_limits,
    boundary_mass,
    bubble_energy,
    bubble_field,
    bubble_masses,
    bubble_pde_residual,
    family_tangents,
    hh_from_phi,
    interior_mass,
    kernel_fields,
    moebius_pullback,
    phi_from_hh,
    psi_field,
    resolvable_a_max,
    resolving_grid,
)
from diskcurv.curvature import CurvatureModel, perturb
from diskcurv.functionals import J_functional, el_residual
from diskcurv.spectral import BoundaryFunction, DiskField, GridSpec, boundary_trace, quad_circle, quad_disk

PHI2 = 2.0 + math.sqrt(3.0)


def test_phi_hh_conventions():
    assert phi_from_hh(2.0) == pytest.approx(PHI2, rel=1e-15)
    assert hh_from_phi(PHI2) == pytest.approx(2.0, rel=1e-15)
    assert phi_from_hh(1.5, -2.0) == pytest.approx(1.5 + math.sqrt(0.25))
    with pytest.raises(InvalidBubble):
        phi_from_hh(0.5)


@given(st.floats(min_value=1.0001, max_value=50.0), st.floats(min_value=-3.0, max_value=-0.01))
def test_hh_phi_round_trip(hh, k):
    if hh * hh + k <= 1e-9:
        return
    assert hh_from_phi(phi_from_hh(hh, k), k) == pytest.approx(hh, rel=1e-12)


@pytest.mark.parametrize("kw", [dict(a=(1.0, 0.0)), dict(a=(0.8, 0.7)), dict(k=0.5), dict(phi=0.5, k=-1.0)])
def test_invalid_params(kw):
    with pytest.raises(InvalidBubble, match="invalid bubble parameters"):
        BubbleParams(**kw)


def test_params_json():
    p = BubbleParams.from_hh(2.0, (0.3, -0.1))
    doc = json.loads(p.to_json())
    assert set(doc) == {"a", "phi", "k", "hh"}
    assert BubbleParams.from_dict(doc) == p


def test_radial_bubble_values(grid):
    u = bubble_field(BubbleParams.from_hh(2.0), grid)
    assert float(u.evaluate(np.array([0.0]), np.array([0.0]))[0]) == pytest.approx(-2 * math.log(PHI2 / 2),
                                                                                      abs=1e-12)
    assert -2 * math.log(PHI2 / 2) == pytest.approx(-1.247622, abs=1e-6)
    tr = np.exp(boundary_trace(u).values / 2)
    assert np.allclose(tr, 1 / math.sqrt(3), atol=1e-14)
    assert np.abs(u.coeffs[:, 1:]).max() < 1e-12


@pytest.mark.parametrize("a", [(0.0, 0.0), (0.5, 0.0), (0.3, -0.4), (0.7, 0.0)])
def test_bubble_solves_problem_default_grid(grid, a):
    # extended-precision sampling; the default grid resolves |a| up to about 0.74
    p = BubbleParams.from_hh(2.0, a)
    u = bubble_field(p, grid, dtype=np.longdouble)
    ri, rb = el_residual(u, perturb(CurvatureModel.constant(-1.0, 2.0, grid), 0.0), check=False)
    assert np.abs(ri.values[1:]).max() < 1e-7
    assert np.abs(rb.values).max() < 1e-8


def test_bubble_solves_problem_concentrated():
    p = BubbleParams.from_hh(2.0, (0.9, 0.0))
    g = resolving_grid(0.9)
    u = bubble_field(p, g, dtype=np.longdouble)
    ri, rb = el_residual(u, perturb(CurvatureModel.constant(-1.0, 2.0, g), 0.0), check=False)
    assert np.abs(ri.values[1:]).max() < 1e-7
    assert np.abs(rb.values).max() < 1e-7


def test_bubble_with_general_frozen_curvature():
    p = BubbleParams.from_hh(1.7, (0.2, 0.4), k=-2.5)
    g = GridSpec(128, 64)
    u = bubble_field(p, g, dtype=np.longdouble)
    ri, rb = el_residual(u, perturb(CurvatureModel.constant(-2.5, 1.7, g), 0.0), check=False)
    assert np.abs(ri.values[1:]).max() < 1e-7 and np.abs(rb.values).max() < 1e-8


def test_resolvable_range_is_honest(grid):
    a_max = resolvable_a_max(grid)
    assert 0.6 < a_max < 0.9
    inside = BubbleParams.from_hh(2.0, (a_max - 0.02, 0.0))
    outside = BubbleParams.from_hh(2.0, (0.9, 0.0))
    assert bubble_pde_residual(inside, grid) < 1e-6
    assert bubble_pde_residual(outside, grid) > 1e-2
    assert resolvable_a_max(resolving_grid(0.9)) >= 0.9


def test_psi_is_bubble_on_axis(grid):
    assert np.array_equal(psi_field(PHI2, 0.4, grid).values,
                          bubble_field(BubbleParams.from_phi(PHI2, (0.4, 0.0)), grid).values)
    with pytest.raises(InvalidBubble):
        psi_field(0.9, 0.0, grid)
    with pytest.raises(InvalidBubble):
        psi_field(PHI2, 1.0, grid)


@pytest.mark.parametrize("hh", [1.5, 2.0, 3.0])
def test_closed_form_masses_match_formulas(hh):
    phi = phi_from_hh(hh)
    assert boundary_mass(phi) == pytest.approx(2 * math.pi / math.sqrt(hh * hh - 1), rel=1e-14)
    assert interior_mass(phi) == pytest.approx(2 * math.pi * (hh / math.sqrt(hh * hh - 1) - 1), rel=1e-13)


def test_mass_values_at_hh2():
    assert boundary_mass(PHI2) == pytest.approx(3.627599, abs=1e-6)
    # 2 pi (2/sqrt 3 - 1)
    assert interior_mass(PHI2) == pytest.approx(0.972012, abs=1e-6)


@pytest.mark.parametrize("lam", [0.0, 0.3, 0.6, 0.9])
def test_mass_invariance_across_lambda(lam):
    p = BubbleParams.from_phi(PHI2, (lam, 0.0))
    area, length = bubble_masses(p, resolving_grid(lam))
    assert length == pytest.approx(boundary_mass(PHI2), rel=1e-8)
    assert area == pytest.approx(interior_mass(PHI2), rel=1e-8)


def test_bubble_energy_closed_forms():
    assert bubble_energy(2.0) == pytest.approx(-8 * math.pi, rel=1e-15)
    assert bubble_energy(PHI2) == pytest.approx(-8 * math.pi * (1 + math.log(1.8660254037844386)), rel=1e-15)
    assert bubble_energy(PHI2) == pytest.approx(-40.8108, abs=1e-4)
    # matched hh reproduces the one-parameter form
    for phi in (1.2, 2.0, PHI2, 7.0):
        assert bubble_energy(phi, hh_from_phi(phi)) == pytest.approx(bubble_energy(phi), rel=1e-13)


@pytest.mark.parametrize("lam", [0.0, 0.7])
def test_bubble_energy_matches_quadrature(lam):
    g = resolving_grid(lam)
    u = psi_field(PHI2, lam, g)
    assert J_functional(u, 2.0, check=False) == pytest.approx(bubble_energy(PHI2), abs=1e-6)


def test_general_energy_by_quadrature():
    # mismatched hh: the general closed form, against quadrature
    u = psi_field(PHI2, 0.3, GridSpec(128, 64))
    assert J_functional(u, 2.5, check=False) == pytest.approx(bubble_energy(PHI2, 2.5), abs=1e-6)


# -- Moebius transport ----------------------------------------------------------------

def test_moebius_map_basics():
    f = MoebiusMap((0.3, 0.4))
    assert f(0.0) == pytest.approx(complex(0.3, 0.4))
    z = np.exp(1j * np.linspace(0, 2 * np.pi, 17))
    assert np.allclose(np.abs(f(z)), 1.0)
    assert np.allclose(f.inverse()(f(0.2 - 0.5j)), 0.2 - 0.5j)
    with pytest.raises(ValueError):
        MoebiusMap((1.0, 0.0))


def test_moebius_derivative_integrals(grid):
    f = MoebiusMap((0.8, 0.0))
    z = grid.x1 + 1j * grid.x2
    d = np.abs(f.derivative(z))
    g = resolving_grid(0.8)
    zg = g.x1 + 1j * g.x2
    dg = np.abs(f.derivative(zg))
    assert quad_disk(DiskField(g, dg**2)) == pytest.approx(math.pi, rel=1e-10)
    assert quad_circle(boundary_trace(DiskField(grid, d))) == pytest.approx(2 * math.pi, rel=1e-10)


def test_pullback_identity_and_recentering(grid):
    u = bubble_field(BubbleParams.from_hh(2.0, (0.3, 0.1)), grid)
    assert np.abs(moebius_pullback(u, (0.0, 0.0)).values - u.values).max() < 1e-12
    v = moebius_pullback(u, (0.3, 0.1))
    radial = bubble_field(BubbleParams.from_hh(2.0), grid)
    assert np.abs(v.values - radial.values).max() < 1e-8
    assert np.abs(v.coeffs[:, 1:]).max() < 1e-8


# -- kernel directions ------------------------------------------------------------------

def test_kernel_fields(grid):
    p = BubbleParams.from_hh(2.0)
    Z1, Z2 = kernel_fields(p, grid)
    assert float(Z1.evaluate(np.array([0.0]), np.array([0.0]))[0]) == pytest.approx(0.0, abs=1e-14)
    eu = bubble_field(p, grid).map(np.exp)
    x1 = DiskField(grid, grid.x1)
    assert abs(quad_disk(x1 * Z2 * eu)) < 1e-14
    c = quad_disk(x1 * Z1 * eu)
    assert c > 1e-3


def test_family_tangents_span_kernel_fields(grid):
    p = BubbleParams.from_hh(2.0)
    t1, t2 = family_tangents(p, grid)
    Z1, Z2 = kernel_fields(p, grid)
    # d u_a / d a_j at a = 0 equals 4 (phi^2 - 1) Z_j, an exact oracle from the closed form
    scale = 4 * (p.phi**2 - 1)
    assert np.abs(t1.values - scale * Z1.values).max() < 1e-6
    assert np.abs(t2.values - scale * Z2.values).max() < 1e-6


# -- first moments near the boundary -----------------------------------------------------------------

def test_appendix_limits_at_center():
    i, b = appendix_limits(0.0, PHI2)
    assert abs(i) < 1e-13 and abs(b) < 1e-13


def test_appendix_limits_trend():
    vals = [appendix_limits(a, PHI2) for a in (0.9, 0.99)]
    assert 0 < vals[0][0] < vals[1][0] < math.pi * 1.02
    assert 0 < vals[0][1] < vals[1][1] < 4 * math.pi * 1.02


def test_log_kernel_identity():
    # int_{dD} x1 log(1 - 2 rho x1 + rho^2) = -2 pi rho
    for rho in (0.1, 0.5, 0.9):
        g = BoundaryFunction.from_function(512, lambda t: np.cos(t) * np.log(1 - 2 * rho * np.cos(t) + rho**2))
        assert quad_circle(g) == pytest.approx(-2 * math.pi * rho, rel=1e-10)
