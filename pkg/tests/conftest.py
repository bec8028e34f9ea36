import numpy as np
import pytest

from thor_sim.amx import TimingModel
from thor_sim.patterns import TilePattern
from thor_sim.victim import Victim, VictimConfig


@pytest.fixture(scope="session")
def model():
    return TimingModel()


@pytest.fixture
def make_victim(model):
    def make(mask, sigma=0.0, seed=0, **kwargs):
        return Victim(mask, VictimConfig(noise_sigma=sigma, rng_seed=seed), model, **kwargs)
    return make


def random_mask(seed: int) -> TilePattern:
    return TilePattern.random(np.random.default_rng(seed))
