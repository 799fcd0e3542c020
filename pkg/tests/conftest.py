import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from neptune_kg.data import build_graph  # noqa: E402

_ACCEPTANCE_LINES = []


def record_acceptance(line):
    _ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_raw():
    train = [("a", "r", "b"), ("a", "r", "c"), ("b", "s", "c"), ("c", "s", "d")]
    valid = [("d", "r", "a")]
    test = [("a", "r", "d"), ("b", "s", "a")]
    return train, valid, test


@pytest.fixture
def tiny_graph(tiny_raw):
    return build_graph(*tiny_raw)
