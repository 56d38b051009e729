import numpy as np
import pytest

from contact_hj.grid import PeriodicGrid
from contact_hj.model import example_quadratic
from contact_hj.semigroup import SemigroupParams


@pytest.fixture(scope="session")
def H():
    return example_quadratic()


@pytest.fixture(scope="session")
def grid():
    return PeriodicGrid(200)


@pytest.fixture(scope="session")
def params(H, grid):
    return SemigroupParams.default(H, grid, v_max=2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
