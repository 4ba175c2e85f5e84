import numpy as np
import pytest

import pecontrol as pc


@pytest.fixture(scope="session")
def mesh1d():
    return pc.build_mesh(1, [1.0], [50])


@pytest.fixture(scope="session")
def lap1d(mesh1d):
    return pc.assemble_laplacian(mesh1d)


@pytest.fixture(scope="session")
def region1d(mesh1d):
    return pc.build_control_region(mesh1d, [(0.2, 0.5)], [(0.3, 0.4)])


@pytest.fixture(scope="session")
def mesh2d():
    return pc.build_mesh(2, [1.0, 1.0], [10, 9])


@pytest.fixture(scope="session")
def lap2d(mesh2d):
    return pc.assemble_laplacian(mesh2d)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
