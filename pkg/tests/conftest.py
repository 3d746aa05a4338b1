import numpy as np
import pytest

from glassid.spin_core import ModelSpec, sample_disorder


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def sk4(rng):
    model = ModelSpec.sk(4)
    return model, sample_disorder(model, rng)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
