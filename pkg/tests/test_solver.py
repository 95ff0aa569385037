from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diskcurv.bubbles import BubbleParams, bubble_field, family_tangents, phi_from_hh
from diskcurv.curvature import CurvatureModel, perturb
from diskcurv.functionals import energy, hessian_apply, pairing
from diskcurv.solver import (
    ContinuationError,
    InitSpec,
    SolveConfig,
    StepSizeError,
    continue_in_eps,
    default_schedule,
    flow_step,
    gradient_flow,
    morse_index,
    newton_solve,
    validate_schedule,
)
from diskcurv.spectral import DiskField, GridSpec, boundary_trace, quad_circle, quad_disk

G32 = GridSpec(32, 16)
G64 = GridSpec(64, 32)


@pytest.fixture(scope="module")
def bubble_solution():
    m = CurvatureModel.constant(-1.0, 2.0, G64)
    return newton_solve(m, 0.0, SolveConfig(grid=G64, gauge="barycenter"))


def test_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(newton_tol=0.0)
    with pytest.raises(ValueError):
        SolveConfig(gauge="radial")
    with pytest.raises(ValueError):
        SolveConfig(max_newton=0)
    assert InitSpec.parse("constant(-2)").describe() == "constant(-2.0)" or "constant" in InitSpec.parse(
        "constant(-2)").describe()
    cfg = SolveConfig(grid=G32, init="constant(1.5)")
    assert np.allclose(cfg.init.build(G32).values, 1.5)
    json.dumps(cfg.to_dict())


def test_bubble_from_zero_with_barycenter_gauge(bubble_solution):
    rep = bubble_solution
    assert rep.converged and rep.reason == "converged"
    assert rep.final_residual < 1e-10
    b = bubble_field(BubbleParams.from_hh(2.0), G64)
    assert np.abs(rep.u.values - b.values).max() < 1e-7
    assert max(abs(c) for c in rep.constraint) < 1e-10
    for v in rep.identity_residuals.values():
        assert v < 1e-7
    doc = json.loads(rep.to_json())
    for key in ("u", "converged", "newton_iters", "final_residual", "identity_residuals", "morse_index",
                "near_zero_modes", "eps"):
        assert key in doc or key == "u"


def test_quadratic_terminal_convergence(bubble_solution):
    h = bubble_solution.residual_history
    ratios = [b / a**2 for a, b in zip(h, h[1:]) if a < 0.1 and b > 1e-14]
    assert ratios and max(ratios) < 10.0


def test_near_one_boundary_curvature():
    m = CurvatureModel.constant(-1.0, 1.05, G64)
    rep = newton_solve(m, 0.0, SolveConfig(grid=G64, gauge="barycenter", morse=False))
    assert rep.converged
    b = bubble_field(BubbleParams.from_hh(1.05), G64)
    assert np.abs(rep.u.values - b.values).max() < 1e-7
    mass = quad_circle(boundary_trace(rep.u).map(lambda v: np.exp(v / 2)))
    assert mass == pytest.approx(2 * math.pi / math.sqrt(1.05**2 - 1), rel=1e-9)
    assert mass == pytest.approx(19.62, abs=0.01)


@pytest.mark.parametrize("init", ["zero", "constant(-2)", "constant(2)"])
def test_nonexistence_regime_diverges(init):
    m = CurvatureModel.constant(-1.0, 0.5, G64)
    rep = newton_solve(m, 0.0, SolveConfig(grid=G64, init=init, morse=False))
    assert not rep.converged
    assert rep.reason == "diverged"


def test_grid_stability():
    m = CurvatureModel.from_expressions("-1 - 0.2*x1*x2", "2")
    sol = [newton_solve(m, 0.0, SolveConfig(grid=g, morse=False)) for g in (G32, G64)]
    assert all(s.converged for s in sol)
    fine = sol[1].u
    coarse_on_fine = DiskField.from_function(G64, sol[0].u.evaluate)
    assert abs(fine.values.max() - sol[0].u.values.max()) < 1e-6
    assert np.abs(fine.values - coarse_on_fine.values).max() < 1e-6


@given(st.sampled_from([0.1, 0.01, 0.0, -0.01, -0.1]),
       st.sampled_from([("-1", "2"), ("-1 - 0.2*x1*x2", "2"), ("-1", "2 + 0.1*x2")]))
@settings(max_examples=8)
def test_identity_residuals_at_converged_solutions(eps, data):
    m = CurvatureModel.from_expressions(*data)
    rep = newton_solve(m, eps, SolveConfig(grid=G64, morse=False))
    if rep.converged:
        assert rep.final_residual < 1e-10
        assert set(rep.identity_residuals) >= {"gauss_bonnet", "kazdan_warner", "pohozaev_rotation"}
        assert max(rep.identity_residuals.values()) < 1e-7


def test_continuation_trace():
    m = CurvatureModel.constant(-1.0, 2.0, G64)
    tr = continue_in_eps(m, None, SolveConfig(grid=G64, gauge="barycenter", morse=False),
                         [0.1, 0.05, 0.01, 0.0])
    assert not tr.aborted
    assert all(r.converged for r in tr.reports)
    assert max(tr.sup_u_trace) - min(tr.sup_u_trace) < 0.5
    for rep, (area, length) in zip(tr.reports, tr.mass_trace):
        c = perturb(m, rep.eps)
        gb = quad_disk(c.K_eps * rep.u.map(np.exp)) + quad_circle(
            c.h_eps * boundary_trace(rep.u).map(lambda v: np.exp(v / 2)))
        assert gb == pytest.approx(2 * math.pi * c.h_tilde + math.pi * c.K_tilde, abs=1e-8)
        assert area > 0 and length > 0
    last = tr.reports[-1]
    assert -area + 2 * length == pytest.approx(2 * math.pi, abs=1e-8)
    assert last.eps == 0.0
    json.loads(tr.to_json())


def test_continuation_first_failure_aborts():
    m = CurvatureModel.constant(-1.0, 0.5, G32)
    tr = continue_in_eps(m, None, SolveConfig(grid=G32, morse=False), [0.0])
    assert tr.aborted and tr.reason.startswith("first solve failed")


def test_schedule_validation():
    assert validate_schedule([0.1, 0.05, 0]) == [0.1, 0.05, 0.0]
    for bad in ([], [0.1, 0.2], [0.1, -0.05], [-1.0, -0.5], [0.1, 0.1]):
        with pytest.raises(ContinuationError):
            validate_schedule(bad)
    sched = default_schedule(CurvatureModel.constant(-1.0, 2.0, G32))
    assert len(sched) == 9 and sched[0] == pytest.approx(0.1) and sched[-1] == 0.0
    assert sched[7] == pytest.approx(0.1 * 2**-7)


@given(st.lists(st.floats(min_value=-0.9, max_value=0.9, allow_nan=False), min_size=1, max_size=6))
def test_schedule_invariant(values):
    try:
        sched = validate_schedule(values)
    except ContinuationError:
        return
    assert all(1 + e > 0 for e in sched)
    assert all(abs(b) < abs(a) and a * b >= 0 for a, b in zip(sched, sched[1:]))


def test_flow_step_at_critical_point(bubble_solution):
    m = CurvatureModel.constant(-1.0, 2.0, G64)
    dt = 0.1
    u1 = flow_step(m, 0.0, bubble_solution.u, dt)
    assert np.abs(u1.values - bubble_solution.u.values).max() < dt * 1e-9


def test_gradient_flow_energy_nonincreasing():
    m = CurvatureModel.constant(-1.0, 0.5, G32)
    rep = gradient_flow(m, 0.0, SolveConfig(grid=G32, morse=False), dt=0.05, t_max=50.0, handoff=False)
    E = np.asarray(rep.energy_history)
    assert E.size == 1001
    assert np.all(np.diff(E) <= 1e-12 * np.maximum(1.0, np.abs(E[:-1])))


def test_gradient_flow_hands_off_to_newton():
    m = CurvatureModel.constant(-1.0, 2.0, G32)
    cfg = SolveConfig(grid=G32, morse=False)
    ref = newton_solve(m, 2.0, cfg)
    u0 = ref.u + DiskField(G32, 1e-3 * (G32.x1**2 - G32.x2**2))
    rep = gradient_flow(m, 2.0, cfg, dt=0.2, t_max=50.0, u0=u0)
    assert rep.converged and rep.reason.startswith("gradient flow handoff")
    assert np.abs(rep.u.values - ref.u.values).max() < 1e-7


def test_gradient_flow_from_zero_stays_below_bubble_level():
    # the bubble is a saddle of index one with energy above I(0); descent
    # from zero cannot reach it
    m = CurvatureModel.constant(-1.0, 2.0, G32)
    rep = gradient_flow(m, 0.0, SolveConfig(grid=G32, morse=False), dt=0.001, t_max=1.0, handoff=False)
    assert not rep.converged
    assert rep.energy_history[0] == pytest.approx(-14 * math.pi)
    assert max(rep.energy_history) < -8 * math.pi * (1 + math.log(phi_from_hh(2.0) / 2))
    assert rep.energy_history[-1] < rep.energy_history[0] - 100


def test_gradient_flow_step_size_error():
    m = CurvatureModel.constant(-1.0, 2.0, G32)
    with pytest.raises(StepSizeError):
        gradient_flow(m, 0.0, SolveConfig(grid=G32, morse=False), dt=50.0, t_max=100.0, handoff=False)


def test_morse_index_of_bubble(bubble_solution):
    rep = bubble_solution
    assert rep.morse_index == 1 and rep.near_zero_modes == 2
    eigs = rep.eigenvalues
    assert eigs == sorted(eigs) and len(eigs) == 6
    # kernel directions are the conformal tangents: their second variation vanishes
    c = perturb(CurvatureModel.constant(-1.0, 2.0, G64), 0.0)
    for t in family_tangents(BubbleParams.from_hh(2.0), G64):
        assert abs(pairing(*hessian_apply(rep.u, c, t, check=False), t)) < 1e-5


def test_morse_index_stable_under_doubling(bubble_solution):
    g = GridSpec(128, 64)
    m = CurvatureModel.constant(-1.0, 2.0, g)
    rep = newton_solve(m, 0.0, SolveConfig(grid=g, gauge="barycenter"))
    assert (rep.morse_index, rep.near_zero_modes) == (bubble_solution.morse_index,
                                                      bubble_solution.near_zero_modes)


def test_morse_index_iterative_agrees(bubble_solution):
    c = perturb(CurvatureModel.constant(-1.0, 2.0, G64), 0.0)
    idx, near, eigs = morse_index(bubble_solution.u, c, 4, method="iterative")
    assert (idx, near) == (1, 2)
    assert np.allclose(eigs, bubble_solution.eigenvalues[:4], atol=1e-8)


@pytest.mark.parametrize("angle", [2 * math.pi * 5 / 64, 2 * math.pi * 11 / 64])
def test_morse_index_rotation_invariant(angle):
    m = CurvatureModel.from_expressions("-1 - 0.2*x1*x2", "2", G64)
    rep = newton_solve(m, 0.0, SolveConfig(grid=G64))
    rot = m.rotated(angle)
    rep_r = newton_solve(rot, 0.0, SolveConfig(grid=G64))
    assert rep.converged and rep_r.converged
    assert (rep.morse_index, rep.near_zero_modes) == (rep_r.morse_index, rep_r.near_zero_modes)
    assert np.allclose(rep.eigenvalues, rep_r.eigenvalues, atol=1e-8)


def test_convex_sanity():
    # with the exponential weights removed only the Dirichlet form remains
    u = DiskField.constant(G32, -800.0)
    c = perturb(CurvatureModel.constant(-1.0, 2.0, G32), 0.0)
    idx, near, eigs = morse_index(u, c, 4)
    assert idx == 0
    assert min(eigs) >= -1e-10


def test_energy_reported(bubble_solution):
    c = perturb(CurvatureModel.constant(-1.0, 2.0, G64), 0.0)
    assert bubble_solution.energy == pytest.approx(energy(bubble_solution.u, c).total, rel=1e-12)
