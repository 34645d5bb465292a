import numpy as np
import pytest

from nlsbubble.field import Grid
from nlsbubble.groundstate import ground_state


@pytest.fixture(scope="session")
def gs1():
    return ground_state(1)


@pytest.fixture(scope="session")
def gs2():
    return ground_state(2)


@pytest.fixture(scope="session")
def grid1():
    return Grid.centered(1, 2048, 80.0)


@pytest.fixture(scope="session")
def grid2():
    return Grid.centered(2, 512, 60.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def smooth_random(grid, rng, width=2.0, envelope=8.0):
    """Band-limited complex random field, localized by a Gaussian envelope."""
    z = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    k2 = grid.k2
    z = np.fft.ifftn(np.fft.fftn(z) * np.exp(-0.5 * width**2 * k2))
    r2 = sum(x**2 for x in grid.coords)
    return z * np.exp(-r2 / (2 * envelope**2))
