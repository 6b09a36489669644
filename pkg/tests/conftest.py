import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from state_ate.data import ExperimentFrame

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def make_frame(n=200, d=3, seed=0, effect=0.0, ratio=False, noise=1.0):
    """Small random frame with a linear signal in the covariates."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    t = np.zeros(n, dtype=np.int8)
    t[rng.permutation(n)[: n // 2]] = 1
    y = 5.0 + X @ np.arange(1, d + 1) + effect * t + noise * rng.normal(size=n)
    z = None
    if ratio:
        z = 10.0 + X[:, 0] + rng.uniform(0.5, 1.5, n)
        y = np.abs(y) + z
    return ExperimentFrame(X, t, y, z)


@pytest.fixture
def frame():
    return make_frame()


@pytest.fixture
def ratio_frame():
    return make_frame(ratio=True)


# one line per acceptance criterion, repeated after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
