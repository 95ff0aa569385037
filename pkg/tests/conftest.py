from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from diskcurv.curvature import CurvatureModel
from diskcurv.spectral import DiskField, GridSpec

settings.register_profile(
    "diskcurv",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("diskcurv")


@pytest.fixture(scope="session")
def grid():
    return GridSpec()


@pytest.fixture(scope="session")
def small_grid():
    return GridSpec(32, 16)


@pytest.fixture(scope="session")
def bubble_model(grid):
    return CurvatureModel.constant(-1.0, 2.0, grid)


def smooth_field(grid: GridSpec, rng: np.random.Generator, degree: int = 4, scale: float = 1.0) -> DiskField:
    """Random polynomial of total degree ``degree`` with coefficients ~ N(0, scale)."""
    x1, x2 = grid.x1, grid.x2
    v = np.zeros(grid.shape)
    for i in range(degree + 1):
        for j in range(degree + 1 - i):
            v += scale * rng.standard_normal() * x1**i * x2**j
    return DiskField(grid, v)


ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def acceptance(capsys):
    """Record the PASS/FAIL line of one acceptance criterion.  The line is
    echoed immediately and repeated in the terminal summary."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        with capsys.disabled():
            print(f"\n{line}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
