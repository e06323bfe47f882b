import numpy as np
import pytest
from hypothesis import settings

from doa_bcskf import AngularGrid, ArrayGeometry, SparseProblem, build_dictionary, realify_dictionary

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

_ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def report():
    """Append a line to the acceptance summary printed at the end of the run."""
    def _report(line):
        _ACCEPTANCE_LINES.append(line)
        print(line)
    return _report


@pytest.fixture(scope="session")
def ula20():
    geom = ArrayGeometry.ula(20)
    grid = AngularGrid.uniform(1.0)
    A = build_dictionary(geom, grid)
    return geom, grid, A, realify_dictionary(A)


def random_problem(rng, m2=None, n2=None, with_mean=True):
    m2 = m2 or int(rng.integers(2, 9)) * 2
    n2 = n2 or int(rng.integers(1, 9)) * 2
    A = rng.standard_normal((m2, n2))
    y = rng.standard_normal(m2)
    x_e = rng.standard_normal(n2) if with_mean else np.zeros(n2)
    p = rng.uniform(0.1, 10.0, n2)
    sigma2 = float(rng.uniform(0.1, 2.0))
    return SparseProblem(A, y, x_e), p, sigma2
