import numpy as np
import pytest

from ldrisk import lgq_model, merton_model
from ldrisk.grid import Grid
from ldrisk.hjb import extract_ergodic


@pytest.fixture(scope="session")
def lgq():
    return lgq_model()


@pytest.fixture(scope="session")
def merton():
    return merton_model()


@pytest.fixture(scope="session")
def grid():
    return Grid.box(6.0, 1, 201)


@pytest.fixture(scope="session")
def lgq_solution(lgq, grid):
    return extract_ergodic(lgq, -1.0, grid)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
