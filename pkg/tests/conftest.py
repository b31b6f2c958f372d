import numpy as np
import pytest

from biequil.geometry import DomainSpec, build_boundary_mesh, build_grid

ACCEPTANCE_LINES = []


def record(criterion: str, ok: bool, detail: str) -> None:
    line = f"{criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def unit_ball():
    return DomainSpec.ball(1.0)


@pytest.fixture(scope="session")
def ellipsoid211():
    return DomainSpec.ellipsoid((2.0, 1.0, 1.0))


@pytest.fixture(scope="session")
def coarse_ball_setup(unit_ball):
    """Small grid for fast solver tests."""
    grid = build_grid(unit_ball, 3.0, 33)
    mesh = build_boundary_mesh(unit_ball, 400)
    return unit_ball, grid, mesh


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
