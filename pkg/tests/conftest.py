import numpy as np
import pytest

from videdit.backbone import SceneConditioner, ToyAutoencoder, ToyDenoiser
from videdit.scheduler import make_schedule
from videdit.world import default_world


@pytest.fixture(scope="session")
def world():
    return default_world()


@pytest.fixture(scope="session")
def conditioner(world):
    return SceneConditioner(world)


@pytest.fixture(scope="session")
def sched():
    return make_schedule(50)


@pytest.fixture()
def toy_denoiser(conditioner, sched):
    return ToyDenoiser(conditioner, sched)


@pytest.fixture()
def autoencoder():
    return ToyAutoencoder(scale=1)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
