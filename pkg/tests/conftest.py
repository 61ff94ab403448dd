import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from scqp.objectives import MarketModel  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_asset():
    """mu = (0.2, 0.1), Sigma = I."""
    return MarketModel.single([0.2, 0.1], np.eye(2))


_ACCEPTANCE = []


@pytest.fixture
def record():
    """Report one acceptance criterion as a single pass/fail line."""
    def _record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        _ACCEPTANCE.append(line)
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
