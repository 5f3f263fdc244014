import numpy as np
import pytest

from llgfem.mesh import build_structured_mesh

UNIT_SQUARE = ((0.0, 0.0), (1.0, 1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def unit_mesh():
    """Factory for structured meshes of the unit square."""

    def make(level, pattern="diagonal"):
        return build_structured_mesh(UNIT_SQUARE, level, pattern)

    return make
