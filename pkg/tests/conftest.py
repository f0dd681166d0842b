import os

# the thread pool size is fixed when numba loads; ask for several so that
# worker-count determinism can be exercised even on small machines
os.environ.setdefault("NUMBA_NUM_THREADS", "4")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from fwikit.grid import GridSpec, SpeedModel, TimeAxis  # noqa: E402
from fwikit.forward import AbsorberSpec, SimConfig, max_stable_dt, stencil_coefficients  # noqa: E402

_CRITERIA: dict = {}


@pytest.fixture
def criterion():
    """Record a one-line acceptance verdict printed at the end of the session."""

    def record(number, ok, detail=""):
        _CRITERIA[number] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_config():
    """48x48 grid, 10-cell absorber, 300 steps, stable up to 2500 m/s."""
    grid = GridSpec(48, 48, 3e-4)
    st = stencil_coefficients(4)
    dt = 0.9 * max_stable_dt(np.array([2500.0]), grid.h, st)
    return SimConfig(grid, TimeAxis(dt, 300), st, AbsorberSpec(width=10))


@pytest.fixture
def water(small_config):
    return SpeedModel.uniform(small_config.grid, 1450.0)
