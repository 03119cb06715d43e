import numpy as np
import pytest

from aperture.array_model import ArrayConfig
from aperture.extrapolator import init_model
from aperture.scene_sim import Scene, SimParams, Target, generate_dataset


@pytest.fixture
def large_array():
    return ArrayConfig(32)


@pytest.fixture
def small_array():
    return ArrayConfig(16)


@pytest.fixture
def tiny_model():
    return init_model(hidden_size=8, seed=3)


@pytest.fixture
def two_target_scene():
    return Scene((Target(-10.0, 0.0, 0.0), Target(20.0, 3.0, 1.0)), 20.0, 5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_dataset(tmp_path, large_array):
    path = tmp_path / 'tiny.ards'
    generate_dataset(SimParams(num_targets=(1, 3)), large_array, 40, path, master_seed=11)
    return path
