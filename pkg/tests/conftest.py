import numpy as np
import pytest

from trailerlq import PathParameterSet, VehicleGeometry, eight_path, synthesize
from trailerlq import ldi


@pytest.fixture(scope="session")
def geometry():
    return VehicleGeometry()


@pytest.fixture(scope="session")
def gain(geometry):
    K, _ = synthesize(geometry, v3=-1.0)
    return K


@pytest.fixture(scope="session")
def pset():
    return PathParameterSet()


@pytest.fixture(scope="session")
def eight(geometry):
    return eight_path(geometry)


@pytest.fixture(scope="session")
def box(pset, geometry, gain):
    return ldi.element_bounds(pset, geometry, gain, -1.0)


@pytest.fixture(scope="session")
def vertices(box):
    return ldi.enumerate_vertices(box, -1.0)


@pytest.fixture(scope="session")
def certificate(vertices, box):
    return ldi.solve_common_lyapunov(vertices, 0.001, box=box)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
