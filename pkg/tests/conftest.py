import numpy as np
import pytest

from spatialfatigue.geometry import preset_geometry
from spatialfatigue.poisson import build_specimen_cache, uniform_cache


@pytest.fixture(scope="session")
def strip():
    return preset_geometry("strip")


@pytest.fixture(scope="session")
def strip_cache(strip):
    return uniform_cache(strip, level=1, name="strip")


@pytest.fixture(scope="session")
def specimen2():
    return preset_geometry("specimen2")


@pytest.fixture(scope="session")
def spec2_cache(specimen2):
    return build_specimen_cache(specimen2, level=1, name="specimen2", deltas=(0.0, 0.0125, 0.025))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
