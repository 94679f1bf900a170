import numpy as np
import pytest

from consistency_lab import AtomicTarget, GaussianMixtureTarget, build_schedule
from consistency_lab.rng import make_rng
from consistency_lab.targets import point_mass


@pytest.fixture
def rng():
    return make_rng(2024, "tests")


@pytest.fixture(scope="session")
def sched64():
    return build_schedule(64, 2.0, 4.0)


@pytest.fixture(scope="session")
def two_atoms_2d():
    return AtomicTarget([[1.0, 0.0], [-1.0, 0.0]], radius=1.0)


@pytest.fixture(scope="session")
def two_atoms_1d():
    return AtomicTarget([[1.0], [-1.0]])


@pytest.fixture(scope="session")
def origin_2d():
    return point_mass([0.0, 0.0])


@pytest.fixture(scope="session")
def gaussian_2d():
    return GaussianMixtureTarget([[1.0, -0.5]], [1.0])


MU_2D = np.array([1.0, -0.5])


def random_atomic(rng, d=None, m=None, scale=1.5):
    d = d or int(rng.integers(1, 4))
    m = m or int(rng.integers(1, 5))
    atoms = scale * rng.standard_normal((m, d))
    w = rng.dirichlet(np.ones(m))
    return AtomicTarget(atoms, w)
