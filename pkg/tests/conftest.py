import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_point(model, rng):
    """Random interior state/control for ``model``."""
    x = rng.uniform(-2.0, 2.0, model.n_x)
    u = rng.uniform(-1.0, 1.0, model.n_u)
    if model.kind == "unicycle":
        x[2] = rng.uniform(-np.pi, np.pi)
    if model.kind == "quad6d":
        u[:2] = rng.uniform(-0.25, 0.25, 2)
        u[2] = 9.81 + rng.uniform(-2.0, 2.0)
    return x, u


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(number, passed, detail)``."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(number, passed, detail):
        line = f"criterion {number:>2} [{'PASS' if passed else 'FAIL'}] {detail}"
        lines.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
