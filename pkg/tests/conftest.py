import numpy as np
import pytest

from lobstr.net import NetConfig, NetworkParams
from lobstr.standard import standard_skeleton
from lobstr.synth import synthetic_walk


@pytest.fixture(scope="session")
def skeleton():
    return standard_skeleton()


@pytest.fixture(scope="session")
def walk():
    return synthetic_walk(seconds=4.0, seed=3)


@pytest.fixture(scope="session")
def tiny_params():
    return NetworkParams.init(NetConfig(hidden=16, latent=8), seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
