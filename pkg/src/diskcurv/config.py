"""Experiment configuration: loading, validation and model construction.

A configuration is a JSON object::

    {
      "command": "solve",
      "model": {"K": "-1", "h": "3 + 0.2*x1", "assert_H": true},
      "solver": {"grid": [128, 64], "eps": 0.0, "gauge": "barycenter"},
      "linking": {"sigma": 0.01, "delta": 0.2},
      "output_dir": "out",
      "seed": 0
    }

``K`` and ``h`` may be expressions (strings or numbers), ``{"expr": ...}``,
or sampled data: ``{"values": [[...]], "grid": {...}}`` for ``K`` and
``{"coeffs": [[re, im], ...]}`` or ``{"values": [...]}`` for ``h``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .curvature import CurvatureModel
from .expr import Expression, ExpressionError
from .paths import LinkingConfig, LinkingError
from .solver import DAMPINGS, GAUGES, InitSpec, SolveConfig
from .spectral import BoundaryFunction, DiskField, GridSpec

COMMANDS = ("solve", "continue", "criteria", "landscape", "degree", "bubbles", "diagnose")
NEEDS_MODEL = {"solve", "continue", "criteria", "landscape", "degree", "diagnose"}
NEEDS_LINKING = {"landscape", "degree"}
TOP_KEYS = {"command", "model", "solver", "linking", "output_dir", "seed", "params"}
SOLVER_KEYS = {"grid", "eps", "newton_tol", "max_newton", "damping", "gauge", "init", "gmres_tol",
               "morse", "n_eigs", "precision", "schedule"}
LINKING_KEYS = {"sigma", "delta", "hh0", "hh", "normalization_shift", "refinement", "n_samples", "p",
                "eps"}


class ConfigError(ValueError):
    pass


@dataclass
class Finding:
    severity: str  # "error" or "warning"
    code: str
    message: str
    path: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ExperimentConfig:
    command: str
    model: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    linking: dict = field(default_factory=dict)
    output_dir: str = "out"
    seed: int = 0
    params: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        errors = [f for f in validate(doc) if f.severity == "error"]
        if errors:
            raise ConfigError("; ".join(f"{f.code}: {f.message}" for f in errors))
        return cls(
            command=doc["command"],
            model=dict(doc.get("model") or {}),
            solver=dict(doc.get("solver") or {}),
            linking=dict(doc.get("linking") or {}),
            output_dir=str(doc.get("output_dir", "out")),
            seed=int(doc.get("seed", 0)),
            params=dict(doc.get("params") or {}),
        )

    def to_dict(self) -> dict:
        return asdict(self)

    # -- derived objects --------------------------------------------------

    @property
    def grid(self) -> GridSpec:
        return parse_grid(self.solver.get("grid"))

    @property
    def eps(self) -> float:
        return float(self.solver.get("eps", 0.0))

    def solve_config(self) -> SolveConfig:
        kw = {k: v for k, v in self.solver.items() if k in SOLVER_KEYS - {"grid", "eps", "schedule"}}
        if "init" in kw:
            kw["init"] = InitSpec.parse(kw["init"])
        return SolveConfig(grid=self.grid, **kw)

    def build_model(self, grid: GridSpec | None = None) -> CurvatureModel:
        return build_model(self.model, grid or self.grid)

    def linking_config(self, model: CurvatureModel | None = None) -> LinkingConfig:
        keys = ("sigma", "delta", "hh0", "hh")
        kw = {k: float(self.linking[k]) for k in keys if k in self.linking}
        if "normalization_shift" in self.linking:
            return LinkingConfig(normalization_shift=float(self.linking["normalization_shift"]), **kw)
        if model is None:
            return LinkingConfig(**kw)
        return LinkingConfig.for_model(model, **kw)


def load_config(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return doc


def parse_grid(spec) -> GridSpec:
    """``None`` (default grid), ``"NT,NR"``, ``[NT, NR]`` or a GridSpec dict."""
    if spec is None:
        return GridSpec()
    if isinstance(spec, GridSpec):
        return spec
    if isinstance(spec, str):
        parts = [p.strip() for p in spec.split(",")]
        if len(parts) != 2:
            raise ConfigError(f"grid must be NTHETA,NR; got {spec!r}")
        try:
            return GridSpec(int(parts[0]), int(parts[1]))
        except ValueError as exc:
            raise ConfigError(f"bad grid {spec!r}: {exc}") from exc
    if isinstance(spec, (list, tuple)) and len(spec) in (2, 3):
        return GridSpec(*spec)
    if isinstance(spec, dict):
        return GridSpec(**spec)
    raise ConfigError(f"cannot read grid {spec!r}")


def _expr_of(spec):
    if isinstance(spec, (int, float, str)):
        return Expression.parse(spec)
    if isinstance(spec, dict) and "expr" in spec:
        return Expression.parse(spec["expr"])
    return None


def build_model(block: dict, grid: GridSpec) -> CurvatureModel:
    """Curvature model from a config block, on ``grid``."""
    if "K" not in block or "h" not in block:
        raise ConfigError("model block needs K and h")
    Ke, he = _expr_of(block["K"]), _expr_of(block["h"])
    if Ke is not None and he is not None:
        return CurvatureModel.from_expressions(Ke, he, grid)
    if Ke is not None:
        K = DiskField.from_function(grid, Ke)
    else:
        kb = block["K"]
        src = parse_grid(kb.get("grid", block.get("grid")))
        K = DiskField(src, np.asarray(kb["values"], dtype=float))
        if src != grid:
            K = DiskField.from_function(grid, K.evaluate)
    if he is not None:
        h = BoundaryFunction.from_function(grid.n_theta, he.on_circle)
    else:
        hb = block["h"]
        if "coeffs" in hb:
            c = np.asarray(hb["coeffs"], dtype=float)
            n = int(hb.get("n", 2 * (len(c) - 1)))
            h0 = BoundaryFunction(c[:, 0] + 1j * c[:, 1], n)
        else:
            h0 = BoundaryFunction.from_values(hb["values"])
        h = h0 if h0.n == grid.n_theta else BoundaryFunction.from_function(grid.n_theta, h0.evaluate)
    return CurvatureModel(K, h)


def _add(findings, severity, code, message, path=""):
    findings.append(Finding(severity, code, message, path))


def validate(config) -> list[Finding]:
    """Schema and invariant checks without running anything."""
    if isinstance(config, ExperimentConfig):
        config = config.to_dict()
    out: list[Finding] = []
    if not isinstance(config, dict):
        _add(out, "error", "schema", "config must be an object")
        return out
    for k in sorted(set(config) - TOP_KEYS):
        _add(out, "warning", "unknown-key", f"unknown top-level key {k!r}", k)
    cmd = config.get("command")
    if cmd not in COMMANDS:
        _add(out, "error", "command", f"command must be one of {', '.join(COMMANDS)}; got {cmd!r}", "command")
    seed = config.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        _add(out, "error", "seed", "seed must be an integer", "seed")

    solver = config.get("solver") or {}
    if not isinstance(solver, dict):
        _add(out, "error", "schema", "solver block must be an object", "solver")
        solver = {}
    for k in sorted(set(solver) - SOLVER_KEYS):
        _add(out, "warning", "unknown-key", f"unknown solver key {k!r}", f"solver.{k}")
    grid = None
    try:
        grid = parse_grid(solver.get("grid"))
    except (ConfigError, ValueError, TypeError) as exc:
        _add(out, "error", "grid", str(exc), "solver.grid")
    eps_values = []
    if "eps" in solver:
        eps_values.append(("solver.eps", solver["eps"]))
    for i, e in enumerate(solver.get("schedule") or []):
        eps_values.append((f"solver.schedule[{i}]", e))
    for path, e in eps_values:
        if not isinstance(e, (int, float)) or isinstance(e, bool) or not math.isfinite(e):
            _add(out, "error", "eps", f"eps must be a finite number; got {e!r}", path)
        elif 1.0 + e <= 0.0:
            _add(out, "error", "invalid perturbation", f"invalid perturbation: 1 + eps = {1 + e} <= 0", path)
    if solver.get("damping", "armijo") not in DAMPINGS:
        _add(out, "error", "damping", f"damping must be one of {DAMPINGS}", "solver.damping")
    if solver.get("gauge", "none") not in GAUGES:
        _add(out, "error", "gauge", f"gauge must be one of {GAUGES}", "solver.gauge")
    for key in ("newton_tol", "gmres_tol"):
        v = solver.get(key, 1.0)
        if not isinstance(v, (int, float)) or not v > 0:
            _add(out, "error", key, f"{key} must be positive", f"solver.{key}")
    if "init" in solver:
        try:
            InitSpec.parse(solver["init"])
        except (ValueError, KeyError, TypeError) as exc:
            _add(out, "error", "init", str(exc), "solver.init")

    model = config.get("model")
    if cmd in NEEDS_MODEL:
        if not isinstance(model, dict) or not model:
            _add(out, "error", "missing-block", f"command {cmd!r} needs a model block", "model")
        elif grid is not None:
            try:
                m = build_model(model, grid)
            except (ConfigError, ExpressionError, ValueError, KeyError, TypeError) as exc:
                _add(out, "error", "model", str(exc), "model")
            else:
                if model.get("assert_H", False) and not m.satisfies_H():
                    _add(out, "error", "hypothesis-H", "K < 0 fails at some collocation node", "model.K")

    linking = config.get("linking")
    if cmd in NEEDS_LINKING:
        if not isinstance(linking, dict) or not linking:
            _add(out, "error", "missing-block", f"command {cmd!r} needs a linking block", "linking")
        else:
            for k in sorted(set(linking) - LINKING_KEYS):
                _add(out, "warning", "unknown-key", f"unknown linking key {k!r}", f"linking.{k}")
            kw = {k: linking[k] for k in ("sigma", "delta", "hh0", "hh", "normalization_shift") if k in linking}
            try:
                if "hh0" in kw and "hh" not in kw:
                    kw["hh"] = 0.5 * (1.0 + float(kw["hh0"]))
                if "hh0" not in kw and "hh" in kw:
                    _add(out, "warning", "linking", "hh given without hh0; hh0 is derived from the model",
                         "linking.hh")
                else:
                    LinkingConfig(**{k: float(v) for k, v in kw.items()})
            except (LinkingError, TypeError, ValueError) as exc:
                _add(out, "error", "linking", str(exc), "linking")
            ref = linking.get("refinement", 3)
            if not isinstance(ref, int) or ref < 0:
                _add(out, "error", "linking", "refinement must be a nonnegative integer", "linking.refinement")
    if "output_dir" in config and not isinstance(config["output_dir"], str):
        _add(out, "error", "output_dir", "output_dir must be a string path", "output_dir")
    return out


__all__ = ["COMMANDS", "ConfigError", "ExperimentConfig", "Finding", "build_model", "load_config",
           "parse_grid", "validate"]
