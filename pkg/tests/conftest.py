import numpy as np
import pytest

from qgibbs.classical import ClassicalModel, ThermalPoint, random_model

ACCEPTANCE_SEED = 20241015
ACCEPTANCE_BETAS = (0.2, 1.0, 3.0)


def acceptance_models(count: int = 50):
    """The fixed set of random spin-1/2 models (N <= 6, arity <= 3) used by the acceptance suite."""
    rng = np.random.default_rng(ACCEPTANCE_SEED)
    return [random_model(rng, int(rng.integers(2, 7))) for _ in range(count)]


def acceptance_instances(count: int = 50):
    return [(m, ThermalPoint(b)) for m in acceptance_models(count) for b in ACCEPTANCE_BETAS]


@pytest.fixture
def ising2():
    return ClassicalModel(2, (((0, 1), 1.0),))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance_log():
    """Record one pass/fail line per acceptance criterion; printed in the terminal summary."""
    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
