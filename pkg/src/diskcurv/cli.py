"""Batch front end.

Each run reads one JSON config, executes one command and writes its results
to the output directory: ``report.json`` (UTF-8, sorted keys), command
specific CSV tables (LF line endings, header row) and ``manifest.json``,
which is written on every path including failures.

Exit status: 0 success, 2 numerical failure (for example a diverged
solve), 1 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import platform
import sys
import time
import traceback
from pathlib import Path

import numpy as np
import scipy
import sympy

from . import __version__
from .bubbles import (
    BubbleParams,
    InvalidBubble,
    boundary_mass,
    bubble_energy,
    bubble_field,
    bubble_masses,
    interior_mass,
    phi_from_hh,
    resolving_grid,
)
from .config import ConfigError, ExperimentConfig, load_config, parse_grid, validate
from .curvature import InvalidPerturbation, check_hypotheses, perturb, phi_profile
from .diagnostics import (
    blowup_fit,
    concentration_masses,
    identity_residuals,
    localization_check,
    residual_rows_csv,
)
from .functionals import J_functional, constraint_state
from .expr import ExpressionError
from .paths import LinkingError, degree_of_chi_lambda, path_energy_profile
from .solver import BLOWUP_MASS, BLOWUP_SUP, continue_in_eps, newton_solve
from .spectral import DiskField, boundary_trace, quad_circle

log = logging.getLogger("diskcurv")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2

# errors that mean the input, not the computation, is at fault
INPUT_ERRORS = (ConfigError, LinkingError, InvalidBubble, InvalidPerturbation, ExpressionError,
                KeyError, TypeError)


class NumericalFailure(RuntimeError):
    """Raised by a command whose computation ran but did not succeed."""

    def __init__(self, reason: str, report: dict | None = None, tables: dict | None = None):
        super().__init__(reason)
        self.reason = reason
        self.report = report or {}
        self.tables = tables or {}


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else repr(v)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def dumps(doc) -> str:
    return json.dumps(_jsonable(doc), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _write(path: Path, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _watch(rep) -> dict:
    u = rep.u
    doc = {"sup_threshold": BLOWUP_SUP, "mass_threshold": BLOWUP_MASS, "triggered": rep.blowup is not None}
    if u.is_finite():
        doc["sup_u"] = float(u.values.max())
        top = np.minimum(np.asarray(boundary_trace(u).values, dtype=float), 700.0)
        doc["boundary_mass"] = float(2.0 * math.pi * np.mean(np.exp(top / 2.0)))
    if rep.blowup is not None:
        doc["halt"] = rep.blowup
    return doc


# ---------------------------------------------------------------------------
# commands; each returns (report dict, {filename: csv text})
# ---------------------------------------------------------------------------


def cmd_solve(cfg: ExperimentConfig):
    scfg = cfg.solve_config()
    model = cfg.build_model()
    rep = newton_solve(model, cfg.eps, scfg)
    doc = {"solve": rep.to_dict(), "model": model.to_dict() if model.K_expr else cfg.model}
    tables = {}
    if rep.identity_residuals:
        rows = [("u", k, v) for k, v in sorted(rep.identity_residuals.items())]
        tables["residuals.csv"] = residual_rows_csv(rows)
    tables["history.csv"] = _csv(["iteration", "residual", "step_length"],
                                 [(i, r, rep.step_lengths[i - 1] if i else "")
                                  for i, r in enumerate(rep.residual_history)])
    if not rep.converged:
        doc["blowup_watch"] = _watch(rep)
        reason = "diverged" if rep.reason.startswith("diverged") else rep.reason
        raise NumericalFailure(reason, {**doc, "detail": rep.reason}, tables)
    return doc, tables


def cmd_continue(cfg: ExperimentConfig):
    scfg = cfg.solve_config()
    model = cfg.build_model()
    sched = cfg.solver.get("schedule")
    eps_from = cfg.solver.get("eps")
    trace = continue_in_eps(model, eps_from=None if sched else eps_from, cfg=scfg, schedule=sched)
    doc = {"trace": trace.to_dict()}
    rows = []
    for e, r, s, m in zip(trace.eps_schedule, trace.reports, trace.sup_u_trace, trace.mass_trace):
        rows.append((float(e), r.converged, r.final_residual, s, m[0], m[1],
                     r.identity_residuals.get("gauss_bonnet", math.nan)))
    tables = {"trace.csv": _csv(["eps", "converged", "residual", "sup_u", "area", "length",
                                 "gauss_bonnet"], rows)}
    if trace.aborted:
        raise NumericalFailure(trace.reason, doc, tables)
    return doc, tables


def cmd_criteria(cfg: ExperimentConfig):
    model = cfg.build_model()
    rep = check_hypotheses(model)
    doc = {"hypotheses": rep.to_dict()}
    tables = {}
    try:
        ev = phi_profile(model).evaluate()
    except ValueError:
        ev = None
    if ev is not None:
        th = model.h.theta
        tables["phi_profile.csv"] = _csv(
            ["theta", "phi", "dtau_phi", "dnu_phi", "dee"],
            zip(th, ev["phi"], ev["dtau_phi"], ev["dnu_phi"], ev["dee"]))
    return doc, tables


def cmd_landscape(cfg: ExperimentConfig):
    model = cfg.build_model()
    lcfg = cfg.linking_config(model)
    eps = float(cfg.linking.get("eps", cfg.solver.get("eps", -0.75 * lcfg.delta)))
    p = tuple(cfg.linking.get("p", (1.0, 0.0)))
    n = int(cfg.linking.get("n_samples", 31))
    grid = parse_grid(cfg.solver["grid"]) if "grid" in cfg.solver else None
    prof = path_energy_profile(model, eps, lcfg, p=p, n_samples=n, grid=grid)
    doc = {"profile": {k: v for k, v in prof.to_dict().items() if k != "samples"},
           "crossings": prof.crossing_taus(), "eps_in_window": lcfg.eps_window[0] < eps < lcfg.eps_window[1]}
    return doc, {"path_profile.csv": prof.to_csv()}


def cmd_degree(cfg: ExperimentConfig):
    model = cfg.build_model()
    lcfg = cfg.linking_config(model)
    ref = int(cfg.linking.get("refinement", 3))
    res = degree_of_chi_lambda(model, lcfg, mesh_refinement=ref)
    doc = {"degree": res.to_dict(), "linking": lcfg.to_dict(), "admissible": res.admissible,
           "winding": res.winding, "n_vertices": res.n_vertices}
    return doc, {"degree.json": dumps(res.to_dict())}


def cmd_bubbles(cfg: ExperimentConfig):
    hhs = [float(v) for v in cfg.params.get("hh", [1.5, 2.0, 3.0])]
    lams = [float(v) for v in cfg.params.get("lam", [0.0, 0.5, 0.9])]
    base = parse_grid(cfg.solver["grid"]) if "grid" in cfg.solver else None
    rows = []
    for hh in hhs:
        phi = phi_from_hh(hh)
        for lam in lams:
            grid = resolving_grid(lam, base)
            p = BubbleParams.from_hh(hh, (lam, 0.0))
            area, length = bubble_masses(p, grid)
            J = J_functional(bubble_field(p, grid), hh, check=False)
            rows.append((hh, lam, phi, length, boundary_mass(phi), area, interior_mass(phi),
                         J, bubble_energy(phi, hh), grid.n_theta, grid.n_r))
    header = ["hh", "lam", "phi", "boundary_mass", "boundary_mass_closed", "interior_mass",
              "interior_mass_closed", "J_hh", "J_hh_closed", "n_theta", "n_r"]
    doc = {"bubbles": [dict(zip(header, r)) for r in rows]}
    return doc, {"bubbles.csv": _csv(header, rows)}


def _smooth_noise(grid, rng: np.random.Generator, modes: int = 4) -> DiskField:
    """Random low-degree polynomial field with sup norm 1 on the grid."""
    x1, x2 = grid.x1, grid.x2
    v = np.zeros(grid.shape)
    for i in range(modes):
        for j in range(modes - i):
            v += rng.standard_normal() * x1**i * x2**j
    return DiskField(grid, v / np.abs(v).max())


def cmd_diagnose(cfg: ExperimentConfig):
    """Synthetic blow-up diagnostics: a bubble centred at ``params.a`` with the
    model's frozen coefficients plus seeded smooth noise of size ``params.noise``,
    fitted, measured and run through the localization test at ``eps``."""
    a = tuple(float(v) for v in cfg.params.get("a", (0.95, 0.0)))
    noise = float(cfg.params.get("noise", 0.0))
    base = parse_grid(cfg.solver["grid"]) if "grid" in cfg.solver else None
    grid = resolving_grid(math.hypot(*a), base)
    model = cfg.build_model(grid)
    eps = cfg.eps
    coeffs = perturb(model, eps)
    nrm = math.hypot(*a)
    p = (1.0, 0.0) if nrm == 0 else (a[0] / nrm, a[1] / nrm)
    k_hat = float(coeffs.K_eps.evaluate(np.array([p[0]]), np.array([p[1]]))[0])
    h_hat = float(coeffs.h_eps.evaluate(np.array([math.atan2(p[1], p[0])]))[0])
    bp = BubbleParams(a=a, phi=phi_from_hh(h_hat, k_hat), k=k_hat, hh=h_hat)
    rng = np.random.default_rng(cfg.seed)
    u = bubble_field(bp, grid) + noise * _smooth_noise(grid, rng)
    fit = blowup_fit(u, model, eps, force=True)
    conc = concentration_masses(u, model, fit)
    verdict = localization_check(fit, eps)
    ir = identity_residuals(u, coeffs)
    st = constraint_state(u)
    doc = {"fit": fit.to_dict(), "concentration": conc.to_dict(), "localization": verdict.to_dict(),
           "identity_residuals": ir.to_dict(), "constraint": st.to_dict(), "grid": grid.to_dict(),
           "input": {"a": list(a), "noise": noise, "seed": cfg.seed, "eps": eps,
                     "boundary_length": quad_circle(boundary_trace(u.map(lambda v: np.exp(v / 2))))}}
    return doc, {"residuals.csv": residual_rows_csv(ir.as_rows("synthetic"))}


COMMAND_TABLE = {
    "solve": cmd_solve,
    "continue": cmd_continue,
    "criteria": cmd_criteria,
    "landscape": cmd_landscape,
    "degree": cmd_degree,
    "bubbles": cmd_bubbles,
    "diagnose": cmd_diagnose,
}


# ---------------------------------------------------------------------------
# runner
# ---------------------------------------------------------------------------


def _versions() -> dict:
    return {"diskcurv": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "sympy": sympy.__version__,
            "longdouble_eps": float(np.finfo(np.longdouble).eps)}


def run(config, output_dir=None, overrides: dict | None = None) -> tuple[int, dict]:
    """Execute one configuration.  Returns ``(exit_status, manifest)``; the
    manifest and any reports are written to the output directory."""
    start = time.perf_counter()
    doc = dict(config.to_dict() if isinstance(config, ExperimentConfig) else config)
    doc["solver"] = dict(doc.get("solver") or {})
    for key, val in (overrides or {}).items():
        if val is not None:
            doc["solver"][key] = val
    out = Path(output_dir or doc.get("output_dir") or "out")
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"config": doc, "versions": _versions(), "artifacts": []}
    findings = validate(doc)
    manifest["findings"] = [f.to_dict() for f in findings]
    status = EXIT_OK
    reason = "ok"
    report = None
    tables = {}
    try:
        cfg = ExperimentConfig.from_dict(doc)
        manifest["grid"] = cfg.grid.to_dict()
        cfg.solve_config()
        report, tables = COMMAND_TABLE[cfg.command](cfg)
    except INPUT_ERRORS as exc:
        status, reason = EXIT_CONFIG, f"config error: {exc}"
        report = {"error": reason}
        log.debug("config failure", exc_info=True)
    except NumericalFailure as exc:
        status, reason = EXIT_NUMERICAL, exc.reason
        report, tables = exc.report, exc.tables
    except (ArithmeticError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        status, reason = EXIT_NUMERICAL, f"numerical failure: {exc}"
        report = {"error": reason, "traceback": traceback.format_exc(limit=3)}
    if report is not None:
        report = {**report, "status": "ok" if status == EXIT_OK else "failed", "reason": reason,
                  "command": doc.get("command")}
        _write(out / "report.json", dumps(report))
        manifest["artifacts"].append("report.json")
    for name, text in sorted(tables.items()):
        _write(out / name, text)
        manifest["artifacts"].append(name)
    manifest.update({"exit_status": status, "reason": reason,
                     "wall_time_s": time.perf_counter() - start})
    _write(out / "manifest.json", dumps(manifest))
    return status, manifest


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="diskcurv", description="Conformal metrics on the disk: batch runner")
    ap.add_argument("--config", required=True, help="JSON experiment config")
    ap.add_argument("--output", help="output directory (overrides output_dir)")
    ap.add_argument("--grid", help="NTHETA,NR (overrides solver.grid)")
    ap.add_argument("--eps", type=float, help="perturbation parameter (overrides solver.eps)")
    ap.add_argument("--quiet", action="store_true", help="suppress the summary line")
    ap.add_argument("--validate", action="store_true", help="only validate the config and print findings")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        doc = load_config(args.config)
    except (ConfigError, OSError) as exc:
        out = Path(args.output or "out")
        out.mkdir(parents=True, exist_ok=True)
        reason = f"config error: {exc}"
        _write(out / "manifest.json", dumps({"exit_status": EXIT_CONFIG, "reason": reason,
                                             "versions": _versions(), "artifacts": []}))
        print(reason, file=sys.stderr)
        return EXIT_CONFIG
    if args.validate:
        findings = validate(doc)
        print(dumps([f.to_dict() for f in findings]), end="")
        return EXIT_CONFIG if any(f.severity == "error" for f in findings) else EXIT_OK
    overrides = {"grid": args.grid, "eps": args.eps}
    status, manifest = run(doc, args.output, overrides)
    if not args.quiet:
        print(f"{doc.get('command')}: exit {status} ({manifest['reason']})")
    return status


if __name__ == "__main__":
    sys.exit(main())
