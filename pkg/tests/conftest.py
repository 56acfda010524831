import json
import pathlib
import sys

import numpy as np
import pytest

HERE = pathlib.Path(__file__).parent
sys.path.insert(0, str(HERE))

from switchsynth.direct import algorithm1  # noqa: E402
from switchsynth.model import Box, build_boost_1cell, build_boost_3cell  # noqa: E402

MODELS = HERE.parent / "models"
V1 = Box([3.0, 1.5], [3.4, 1.8])
V3 = Box([4, 4, 4, 15], [7, 7, 7, 17])


@pytest.fixture(scope="session")
def oracle():
    return json.loads((HERE / "data" / "oracles.json").read_text())


@pytest.fixture(scope="session")
def boost1():
    return build_boost_1cell()


@pytest.fixture(scope="session")
def boost3():
    return build_boost_3cell()


@pytest.fixture(scope="session")
def boost1_subspace(boost1):
    return algorithm1(boost1, V1, resolution=200)


@pytest.fixture
def models():
    return MODELS


def as_array(x):
    return np.asarray(x, dtype=float)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
