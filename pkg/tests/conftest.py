import numpy as np
import pytest

from datasets import DatasetManager
from divergence_core import DiscreteDensity
from models import geometric_family, poisson_family


@pytest.fixture
def poisson():
    return poisson_family()


@pytest.fixture
def geometric():
    return geometric_family()


@pytest.fixture(scope="session")
def datasets():
    return DatasetManager()


@pytest.fixture
def drosophila_one(datasets):
    return datasets.builtin_dataset("drosophila_one").table


@pytest.fixture
def control(datasets):
    return datasets.builtin_dataset("drosophila_control").table


@pytest.fixture
def treated(datasets):
    return datasets.builtin_dataset("drosophila_treated").table


@pytest.fixture
def three_point():
    g = DiscreteDensity([0, 1, 2], [0.5, 0.3, 0.2])
    f = DiscreteDensity([0, 1, 2], [0.4, 0.4, 0.2])
    return g, f


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


