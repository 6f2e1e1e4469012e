import numpy as np
import pytest

from gsk_parisi.model import MixtureXi, PriorMeasure


@pytest.fixture
def gs_prior():
    return PriorMeasure.ghatak_sherrington(0.0)


@pytest.fixture
def sk_prior():
    return PriorMeasure.ising(0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def sk_mixture(beta):
    return MixtureXi.sk(beta)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def report(number: int, title: str, passed: bool, detail: str) -> None:
        line = f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert passed, line

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
