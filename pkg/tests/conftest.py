import sys

import numpy as np
import pytest

from mpct import PendulumParams, build_offline, pendulum_problem, solve
from mpct.solver import SolveOptions


@pytest.fixture(scope="session")
def params():
    return PendulumParams()


@pytest.fixture(scope="session")
def pendulum():
    return pendulum_problem()


@pytest.fixture(scope="session")
def pendulum_off(pendulum):
    off = build_offline(pendulum)
    # trigger compilation of the kernel once per session
    solve(off, np.zeros(3), np.zeros(3), np.zeros(1), opts=SolveOptions())
    return off


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[number])
