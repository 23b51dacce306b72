"""Shared, session-cached computations (slice diagrams, the two-parameter
map) and the PASS/FAIL summary printed for the acceptance criteria."""
import time

import pytest

from smcpace.codim2 import SLICES, render_two_param_map, slice_diagram
from smcpace.diagram import one_parameter_diagram
from smcpace.model import DIMLESS, DIMLESS_DEFAULT

ACCEPTANCE_LINES: list = []


def record(criterion: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


class Timed(dict):
    """Mapping of results plus the wall time spent computing them."""
    elapsed: float = 0.0


@pytest.fixture(scope="session")
def slices():
    t0 = time.perf_counter()
    out = Timed((name, slice_diagram(v3b)) for name, v3b in SLICES.items())
    out.elapsed = time.perf_counter() - t0
    return out


@pytest.fixture(scope="session")
def two_param_map(slices):
    t0 = time.perf_counter()
    m = render_two_param_map(diagrams=dict(slices))
    m.elapsed = time.perf_counter() - t0 + slices.elapsed
    return m


@pytest.fixture(scope="session")
def default_diagram():
    """Default parameters, v1b freed over the study window."""
    return one_parameter_diagram(DIMLESS, DIMLESS_DEFAULT, "v1b", (-0.7, 0.1))
