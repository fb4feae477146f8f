import numpy as np
import pytest

from meirl.mdp import GridWorld


def rand_env(rng, rows, cols):
    return rng.random((5, rows, cols))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_world(rows=8, cols=8, resolution=1.0, seed=0):
    r = np.random.default_rng(seed)
    return GridWorld(rows=rows, cols=cols, resolution=resolution,
                     env=rand_env(r, rows, cols))
