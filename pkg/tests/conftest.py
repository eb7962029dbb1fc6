import numpy as np
import pytest

from meshtomo import kernels
from meshtomo.geometry import MaterialTable, ScanGeometry, make_box


@pytest.fixture(params=kernels.available())
def backend(request):
    with kernels.backend(request.param):
        yield request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def unit():
    return MaterialTable.single(1.0)


def centered_cube(side=1.0, materials=(1, 0)):
    h = side / 2
    return make_box((-h, -h, -h), (h, h, h), materials)


def small_geometry(n_angles=4, n=16, start=7.0):
    """Generic angles (no face edge-on) over a (-1, 1) field of view."""
    return ScanGeometry.circular(n_angles, n, n, 2.0 / n, start, start + 180.0)


ACCEPTANCE = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    """Store one acceptance verdict for the end-of-run summary."""
    ACCEPTANCE[criterion] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
