import pytest

from epicontrol.models import DiseaseParams, Family, ModelSpec


@pytest.fixture
def sir():
    return ModelSpec(Family.SIR, refined=True, population=1e6)


@pytest.fixture
def headline():
    """R0 = 3, rho = 0.85 with the default 10-day infectious period."""
    return DiseaseParams(r0=3.0, gamma=0.1, rho=0.85, iota=1e-4)


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
