import numpy as np
import pytest
from hypothesis import settings

from maganomaly.mesh import ShapeSpec
from maganomaly.polarization import reference_operator

settings.register_profile("pkg", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("pkg")


@pytest.fixture(scope="session")
def sphere3():
    """Unit sphere at refinement 3 with its K* (shared, assembled once)."""
    return reference_operator(ShapeSpec("unit-ball", 3))


@pytest.fixture(scope="session")
def sphere2():
    return reference_operator(ShapeSpec("unit-ball", 2))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
