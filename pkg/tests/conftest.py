import os
import sys

import pytest

# Add the repository root to the path for `src` imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.physics import IsotropicMaterial  # noqa: E402
from src.tensor_grid import build_grid  # noqa: E402


@pytest.fixture
def material():
    return IsotropicMaterial(lam=1.0, mu=0.5, dim=2)


@pytest.fixture
def grid2():
    return build_grid(2, 2)


@pytest.fixture
def grid4():
    return build_grid(2, 4)
