import random
import sys

import pytest

from dpac import paillier as pl


@pytest.fixture(scope="session")
def small_key():
    return pl.keygen(256, random.Random(11))


@pytest.fixture(scope="session")
def key_1024():
    return pl.keygen(1024, random.Random(7))


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(module, "_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
