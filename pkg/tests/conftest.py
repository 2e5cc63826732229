import json
import os

import numpy as np
import pytest

from emot.lattice import MarketGrid

SCENARIO_DIR = os.path.join(os.path.dirname(__file__), "..", "scenarios")

THIRD = 1.0 / 3.0


@pytest.fixture
def g1():
    """Single-period lattice: spot 1, terminal nodes {0, 1, 2}."""
    return MarketGrid([[[1.0]], [[0.0, 1.0, 2.0]]])


@pytest.fixture
def g1_uniform():
    return [np.array([1.0]), np.array([THIRD, THIRD, THIRD])]


@pytest.fixture
def g2():
    """Two-period lattice: 2 -> {1, 3} -> {0, 2, 4}."""
    return MarketGrid([[[2.0]], [[1.0, 3.0]], [[0.0, 2.0, 4.0]]])


@pytest.fixture
def g2_marginals():
    return [
        np.array([1.0]),
        np.array([0.5, 0.5]),
        np.array([0.25, 0.5, 0.25]),
    ]


@pytest.fixture
def g1_call(g1):
    return np.maximum(g1.path_values[:, 1, 0] - 1.0, 0.0)


@pytest.fixture
def g2_call(g2):
    return np.maximum(g2.path_values[:, 2, 0] - 2.0, 0.0)


def scenario_path(name: str) -> str:
    return os.path.join(SCENARIO_DIR, name + ".json")


def load_scenario(name: str) -> dict:
    with open(scenario_path(name)) as fh:
        return json.load(fh)
