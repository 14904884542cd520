import numpy as np
import pytest

from katbench.data import Dataset
from katbench.harness import make_synthetic
from katbench.problem import Regularizer, make_problem


def random_dataset(rng, n, d, density=0.4, binary=True):
    A = np.where(rng.random((n, d)) < density, rng.standard_normal((n, d)), 0.0)
    if binary:
        b = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    else:
        b = rng.standard_normal(n)
    return Dataset.from_dense(A, b)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=["lsp", "tl1"])
def nc_problem(request):
    ds = make_synthetic(60, 8, 3, density=0.5)
    return make_problem(ds, "squared_hinge", Regularizer(request.param, lam=0.3, beta=0.7))


ACCEPTANCE_LINES = []


def report(criterion, ok, detail):
    """Log one acceptance verdict; the lines are echoed after the run."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
