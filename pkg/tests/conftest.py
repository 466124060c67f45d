import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from datamodel.types import SpectralCube, WavelengthGrid


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def desk_grid():
    return WavelengthGrid.desk()


@pytest.fixture
def random_cube(rng, desk_grid):
    return SpectralCube(rng.random((24, 24, desk_grid.count)), desk_grid)
