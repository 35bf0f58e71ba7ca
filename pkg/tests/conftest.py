import numpy as np
import pytest

from xgfeec.mesh_complex import build_structured_mesh


@pytest.fixture(scope="session")
def mesh1():
    return build_structured_mesh(1)


@pytest.fixture(scope="session")
def mesh2():
    return build_structured_mesh(2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
