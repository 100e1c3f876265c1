import functools
import os

# single-threaded deterministic mode for the whole suite
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import pytest

from warp_harmonic.spheremesh import build_icosphere
from warp_harmonic.warpgeom import make_spectrum_warp, make_tube_warp


@functools.lru_cache(maxsize=None)
def icosphere(level):
    return build_icosphere(level)


@pytest.fixture(scope="session")
def tube():
    return make_tube_warp(0.3)


@pytest.fixture(scope="session")
def spec_warp():
    return make_spectrum_warp(1.0)


@pytest.fixture(scope="session")
def mesh3():
    return icosphere(3)


@pytest.fixture(scope="session")
def mesh4():
    return icosphere(4)


@pytest.fixture(scope="session")
def mesh5():
    return icosphere(5)


@pytest.fixture(scope="session")
def mesh6():
    return icosphere(6)


ACCEPTANCE_LINES = []


@pytest.fixture
def record():
    """Collect one verdict line per acceptance criterion for the terminal summary."""
    def _record(name, ok, detail=""):
        ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
