import numpy as np
import pytest

from kgtmm.problems import ProblemDims, QuadraticClient, QuadraticProblem, make_quadratic_suite
from kgtmm.topology import build_graph, metropolis_weights


def toy_client(a=0.0, b=0.0):
    """f(x, y) = -1/2 x^2 + 2xy - y^2 (+ a x + b y)."""
    return QuadraticClient([[-1.0]], [[2.0]], [[2.0]], [a], [b])


@pytest.fixture
def toy():
    return QuadraticProblem([toy_client()])


@pytest.fixture(scope="session")
def suite8():
    return make_quadratic_suite(ProblemDims(8, 5, 4), heterogeneity=1.0, target_kappa=5.0, seed=0)


@pytest.fixture(scope="session")
def ring8():
    return metropolis_weights(build_graph("ring", 8))


def central_diff(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
