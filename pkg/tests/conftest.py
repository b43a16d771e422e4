"""Shared fixtures and the acceptance summary printed at the end of the run."""
import numpy as np
import pytest

from scogce import load_fixture

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def record(num: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[num] = (bool(passed), detail)
    print(f"AC{num} {'PASS' if passed else 'FAIL'}: {detail}")


@pytest.fixture(scope="session")
def ex1():
    return load_fixture("example1")[0]


@pytest.fixture(scope="session")
def ex2():
    return load_fixture("example2")


@pytest.fixture(scope="session")
def ex3():
    return load_fixture("example3")[0]


@pytest.fixture(scope="session")
def ex4():
    return load_fixture("example4")


@pytest.fixture(scope="session")
def scalar():
    return load_fixture("scalar")[0]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        tr.write_line(f"AC{num} {'PASS' if ok else 'FAIL'}: {detail}")
