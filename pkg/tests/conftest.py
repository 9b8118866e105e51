import numpy as np
import pytest

from mgapprox.model import Discounted, FiniteHorizon
from mgapprox.quantize import FiniteGame


def random_finite_game(rng, k=3, counts=(2, 2), beta=0.9, T=None, zero_sum=False,
                       common=False, scale=1.0):
    N = len(counts)
    J = int(np.prod(counts))
    costs = rng.uniform(-scale, scale, size=(N, k, J))
    if zero_sum:
        costs[1] = -costs[0]
    if common:
        costs[:] = costs[0]
    trans = rng.dirichlet(np.ones(k), size=(k, J))
    horizon = FiniteHorizon(T) if T is not None else Discounted(beta)
    return FiniteGame(costs, trans, counts, horizon)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


@pytest.fixture
def criterion():
    def record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
