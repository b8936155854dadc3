from __future__ import annotations

import warnings

import pytest

from anodiss.params import build_table

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def desk():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return build_table(regime="desk", q_max=4)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running numerical checks")
    warnings.filterwarnings("ignore", message="desk regime")
    warnings.filterwarnings("ignore", message=r"40 a0\*\*")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
