import time

import pytest

from sccsi.harness.config import ExperimentConfig
from sccsi.harness.experiment import train_model

_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def report():
    """Record one PASS/FAIL line; all lines are repeated in the terminal summary."""
    def emit(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        _ACCEPTANCE_LINES.append(line)
        return ok
    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def desk_config():
    """Default desk profile: N=8, M=64, rho=0.2, 5 dB, 20k samples, 3k iterations per subnet."""
    return ExperimentConfig()


@pytest.fixture(scope="session")
def desk_training(desk_config):
    t0 = time.perf_counter()
    model = train_model(desk_config)
    return model, time.perf_counter() - t0


@pytest.fixture(scope="session")
def desk_model(desk_training):
    return desk_training[0]
