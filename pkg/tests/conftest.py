import numpy as np
import pytest

from riskmin.core_model import EvaluatedClass, FiniteSupportDistribution, draw_sample

# lines collected by the acceptance module, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_class(rng, m, M, n, seed=0):
    dist = FiniteSupportDistribution(rng.dirichlet(np.ones(m)))
    sample = draw_sample(dist, n, seed)
    return dist, sample, EvaluatedClass.from_population(rng.random((m, M)), sample)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
