from pathlib import Path

import numpy as np
import pytest

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures():
    return FIXTURES


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_instance(rng, K, N, M, missing=0.0):
    q = rng.dirichlet(np.ones(K) * 1.5, size=N)
    p = rng.uniform(0.05, 0.95, size=(K, M))
    x = rng.binomial(2, q @ p)
    if missing:
        x[rng.random(x.shape) < missing] = 9
    return x, q, p


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[num])
