"""The ten acceptance criteria at their stated tolerances.

Each test records one PASS/FAIL line (see the ``acceptance`` fixture) before
asserting, so a failing criterion still reports its measured values.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from diskcurv.bubbles import (
    BubbleParams,
    appendix_limits,
    bubble_field,
    bubble_masses,
    phi_from_hh,
    psi_field,
    resolving_grid,
)
from diskcurv.cli import run
from diskcurv.curvature import CurvatureModel, perturb
from diskcurv.diagnostics import (
    _frozen,
    blowup_fit,
    gauss_bonnet_residual,
    kazdan_warner_residual,
    kazdan_warner_sides,
    localization_check,
    pohozaev_residual,
)
from diskcurv.expr import CONFORMAL, ROTATION
from diskcurv.functionals import J_functional
from diskcurv.paths import LinkingConfig, chi_path, degree_of_chi_lambda, gamma_path
from diskcurv.functionals import constraint_state
from diskcurv.solver import SolveConfig, newton_solve
from diskcurv.spectral import DiskField, GridSpec, boundary_trace

HH = (1.5, 2.0, 3.0)
LAMS = (0.0, 0.5, 0.9)


def test_criterion_01_closed_form_masses(acceptance):
    worst, slowest = 0.0, 0.0
    for hh in HH:
        for lam in LAMS:
            t0 = time.perf_counter()
            p = BubbleParams.from_hh(hh, (lam, 0.0))
            area, length = bubble_masses(p, resolving_grid(lam))
            slowest = max(slowest, time.perf_counter() - t0)
            root = math.sqrt(hh * hh - 1)
            worst = max(worst, abs(length / (2 * math.pi / root) - 1),
                        abs(area / (2 * math.pi * (hh / root - 1)) - 1))
    ok = worst < 1e-8 and slowest < 1.0
    assert acceptance(1, ok, f"max rel error {worst:.2e} (< 1e-8), slowest case {slowest:.2f} s (< 1 s)")


def test_criterion_02_conformal_energy_invariance(acceptance):
    worst, slowest = 0.0, 0.0
    for hh in HH:
        phi = phi_from_hh(hh)
        target = -8 * math.pi * (1 + math.log(phi / 2))
        for lam in LAMS:
            t0 = time.perf_counter()
            J = J_functional(psi_field(phi, lam, resolving_grid(lam)), hh, check=False)
            slowest = max(slowest, time.perf_counter() - t0)
            worst = max(worst, abs(J - target))
    ok = worst < 1e-6 and slowest < 1.0
    assert acceptance(2, ok, f"max |J - closed form| {worst:.2e} (< 1e-6), slowest case {slowest:.2f} s")


def test_criterion_03_appendix_limits(acceptance):
    vals = []
    for a in (0.9, 0.99, 0.999):
        vals.append(appendix_limits(a, phi_from_hh(2.0), -1.0, resolving_grid(a)))
    interior = [v[0] for v in vals]
    boundary = [v[1] for v in vals]
    err_i = abs(interior[-1] / math.pi - 1)
    err_b = abs(boundary[-1] / (4 * math.pi) - 1)
    mono = (abs(interior[0] - math.pi) > abs(interior[1] - math.pi) > abs(interior[2] - math.pi)
            and abs(boundary[0] - 4 * math.pi) > abs(boundary[1] - 4 * math.pi)
            > abs(boundary[2] - 4 * math.pi))
    ok = err_i < 0.02 and err_b < 0.02 and mono
    assert acceptance(3, ok, f"a=0.999: interior rel err {err_i:.2e}, boundary rel err {err_b:.2e} (< 2%), "
                             f"monotone approach {mono}")


@pytest.fixture(scope="module")
def bubble_solve():
    g = GridSpec(128, 64)
    t0 = time.perf_counter()
    rep = newton_solve(CurvatureModel.constant(-1.0, 2.0, g), 0.0,
                       SolveConfig(grid=g, gauge="barycenter", init="zero"))
    return rep, time.perf_counter() - t0


def test_criterion_04_exact_solution_solve(acceptance, bubble_solve):
    rep, wall = bubble_solve
    g = rep.u.grid
    err = float(np.abs(rep.u.values - bubble_field(BubbleParams.from_hh(2.0), g).values).max())
    ok = rep.converged and rep.newton_iters <= 15 and err < 1e-7 and wall < 30
    assert acceptance(4, ok, f"{rep.newton_iters} Newton iterations (<= 15), sup error {err:.2e} (< 1e-7), "
                             f"{wall:.1f} s (< 30 s) on 128x64")


MODELS_5 = {
    "constant K=-1, h=2": ("-1", "2", "barycenter"),
    "K=-1, h=3+0.2x1": ("-1", "3 + 0.2*x1", "none"),
    "K=-1-0.2x1x2, h=2": ("-1 - 0.2*x1*x2", "2", "none"),
}


def test_criterion_05_necessary_conditions(acceptance):
    worst, n_conv, n_total, failed = 0.0, 0, 0, []
    for name, (K, h, gauge) in MODELS_5.items():
        m = CurvatureModel.from_expressions(K, h)
        for eps in (0.1, 0.01, 0.0, -0.01, -0.1):
            n_total += 1
            rep = newton_solve(m, eps, SolveConfig(gauge=gauge, morse=False))
            if not rep.converged:
                failed.append(f"{name} eps={eps}")
                continue
            n_conv += 1
            c = perturb(m, eps)
            res = (gauss_bonnet_residual(rep.u, c), kazdan_warner_residual(rep.u, c, "full"),
                   pohozaev_residual(rep.u, c, ROTATION), pohozaev_residual(rep.u, c, CONFORMAL))
            worst = max(worst, *res)
    ok = n_conv > 0 and worst < 1e-7
    note = f"; not converged: {', '.join(failed)}" if failed else ""
    assert acceptance(5, ok, f"{n_conv}/{n_total} solves converged, max identity residual {worst:.2e} "
                             f"(< 1e-7){note}")


def test_criterion_06_hessian_kernel(acceptance, bubble_solve):
    rep, _ = bubble_solve
    g2 = GridSpec(256, 128)
    rep2 = newton_solve(CurvatureModel.constant(-1.0, 2.0, g2), 0.0, SolveConfig(grid=g2, gauge="barycenter"))
    counts = [sum(abs(e) < 1e-5 for e in r.eigenvalues) for r in (rep, rep2)]
    ok = counts == [2, 2] and rep.near_zero_modes == rep2.near_zero_modes == 2
    assert acceptance(6, ok, f"|lambda| < 1e-5 count {counts[0]} on 128x64, {counts[1]} on 256x128 "
                             f"(exactly 2 on both)")


def test_criterion_07_obstruction(acceptance, tmp_path):
    status, _ = run({"command": "criteria", "model": {"K": "-1", "h": "3 + x1"}}, tmp_path)
    import json
    rep = json.loads((tmp_path / "report.json").read_text())["hypotheses"]
    cps = sorted(rep["phi_critical_points"], key=lambda c: c["theta"])
    thetas = [c["theta"] for c in cps]
    signs = [c["dnu_phi"] for c in cps]
    zeros_ok = (len(cps) == 2 and abs(thetas[0]) < 1e-8 and abs(thetas[1] - math.pi) < 1e-8
                and signs[0] > 0 and signs[1] < 0)
    verdict_ok = rep["verdict"] == "neither b− nor b+"
    g = GridSpec(64, 32)
    c = perturb(CurvatureModel.from_expressions("-1", "3 + x1", g), 0.0)
    rr = g.x1**2 + g.x2**2
    kw_ok = True
    margin = math.inf
    for u in (DiskField.constant(g, 0.0), DiskField(g, -1 + 0.5 * rr), DiskField(g, 2 - rr**2),
              DiskField(g, np.log(2 / (1 + 3 * rr)))):
        lhs, rhs = kazdan_warner_sides(u, c)
        bound = 4 * math.exp(float(boundary_trace(u).values.min()) / 2) * math.pi
        kw_ok &= lhs < 0 and abs(lhs - rhs) >= bound * (1 - 1e-12)
        margin = min(margin, abs(lhs - rhs) / bound)
    ok = status == 0 and zeros_ok and verdict_ok and kw_ok
    assert acceptance(7, ok, f"zeros at theta={[round(t, 6) for t in thetas]}, dnu Phi signs "
                             f"{['+' if s > 0 else '-' for s in signs]}, verdict {rep['verdict']!r}, "
                             f"KW residual / 4 pi e^(min u/2) >= {margin:.3f}")


def test_criterion_08_degree(acceptance):
    model = CurvatureModel.constant(-0.5, 2.0)
    cfg = LinkingConfig.for_model(model, sigma=0.01)
    t0 = time.perf_counter()
    res = degree_of_chi_lambda(model, cfg, 3)
    wall = time.perf_counter() - t0
    ok = res.degree == 1 and res.admissible and res.min_homotopy_norm > 0 and wall < 300
    assert acceptance(8, ok, f"degree {res.degree}, min |H| over mesh x {len(res.s_values)} s-values "
                             f"{res.min_homotopy_norm:.3g} (> 0), {wall:.1f} s (< 300 s)")


def test_criterion_09_mountain_pass_crossing(acceptance):
    cfg = LinkingConfig.for_model(CurvatureModel.constant(-0.5, 2.0), sigma=0.01)
    taus = np.linspace(0.0, 1.0, 301)
    f = np.array([chi_path(cfg, (1.0, 0.0), t)[0] for t in taus])
    changes = np.nonzero(np.sign(f[:-1]) != np.sign(f[1:]))[0]
    # cross-check the boundary quadrature against the spectral one at the endpoints
    g = resolving_grid(0.99)
    A0 = constraint_state(gamma_path(cfg, (1.0, 0.0), 0.0, g)).A
    A1 = constraint_state(gamma_path(cfg, (1.0, 0.0), 1.0, g)).A
    ok = A0 < 1 < A1 and changes.size >= 1 and f[0] < 0 < f[-1]
    where = ", ".join(f"{taus[i]:.3f}..{taus[i + 1]:.3f}" for i in changes)
    assert acceptance(9, ok, f"A(u0) = {A0:.6f} < 1 < A(u3) = {A1:.2f}; A - 1 changes sign in tau {where}")


C10 = {
    "b+": ("-2 + 0.5*(x1^2+x2^2)", "2 + 0.1*x1"),
    "b-": ("-0.5 - 0.5*(x1^2+x2^2)", "2 + 0.1*x1"),
}


def _fit(K, h, eps, r, theta):
    m = CurvatureModel.from_expressions(K, h)
    g = resolving_grid(r)
    p = (math.cos(theta), math.sin(theta))
    phi, k, hh = _frozen(perturb(m.on_grid(g), eps), p)
    u = bubble_field(BubbleParams(a=(r * p[0], r * p[1]), phi=phi, k=k, hh=hh), g)
    return blowup_fit(u, m, eps, force=True)


def test_criterion_10_localization(acceptance):
    eps = 0.05
    verdicts = {}
    for name, (K, h) in C10.items():
        out = []
        for r in (0.9, 0.95, 0.99):
            for theta in (0.0, math.pi):
                v = localization_check(_fit(K, h, eps, r, theta), eps)
                out.append(v)
        verdicts[name] = out
    plus_ok = all(v.verdict == "consistent" and v.tangential_ok and eps * v.dnu_phi >= -1e-6
                  for v in verdicts["b+"])
    minus_flagged = all(v.verdict == "inconsistent" and not v.normal_ok for v in verdicts["b-"])
    ok = plus_ok and minus_flagged
    assert acceptance(10, ok, f"b+/eps>0: {sum(v.verdict == 'consistent' for v in verdicts['b+'])}/6 "
                              f"consistent; b-/eps>0: "
                              f"{sum(v.verdict == 'inconsistent' for v in verdicts['b-'])}/6 flagged "
                              f"inconsistent")
