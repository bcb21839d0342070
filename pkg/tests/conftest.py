import numpy as np
import pytest

from visionbeam.channel import MMWAVE, SUB6, ChannelConfig

ACCEPTANCE_LINES = {}


def record_acceptance(number, passed, detail):
    """Remember one criterion's verdict for the terminal summary."""
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_mmw():
    return ChannelConfig(8, 32, 8, band=MMWAVE)


@pytest.fixture
def small_sub6():
    return ChannelConfig(4, 16, 4, 50e-9, band=SUB6)
