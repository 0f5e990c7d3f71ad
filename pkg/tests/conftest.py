import math

import numpy as np
import pytest

from levycns.spectral import TorusGrid, forward_transform, forward_vector_transform, leray_project

ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, passed: bool, detail: str):
    line = f"{'PASS' if passed else 'FAIL'} criterion {number:2d}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture
def grid():
    return TorusGrid(N=32, m=10)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_scalar(grid, rng, kmax=None):
    """Real band-limited random scalar field."""
    vals = rng.standard_normal((grid.N, grid.N))
    f = forward_transform(vals, grid)
    if kmax is not None:
        k = np.maximum(np.abs(grid.kint)[:, None], np.abs(grid.kint)[None, :])
        f = type(f)(grid, np.where(k <= kmax, f.coeffs, 0.0))
    return f


def random_velocity(grid, rng):
    vals = rng.standard_normal((2, grid.N, grid.N))
    return leray_project(forward_vector_transform(vals, grid))


@pytest.fixture
def output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("CNS_OUTPUT_ROOT", str(tmp_path))
    return tmp_path


TWO_PI = 2.0 * math.pi
