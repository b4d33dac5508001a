import numpy as np
import pytest

from ricci_s2 import geometry as geo


def smooth_profile(grid, rng, kmax=6, scale=1.0):
    coef = rng.standard_normal(kmax + 1) / (1.0 + np.arange(kmax + 1)) ** 2
    return scale * sum(c * geo.legendre(k, grid.x) for k, c in enumerate(coef))


def smooth_tensor(g, rng, scale=0.2):
    grid = g.grid
    s1 = smooth_profile(grid, rng, scale=scale)
    s2 = s1 + grid.sin_sq * smooth_profile(grid, rng, scale=scale)
    return geo.SymTensor2(s1 * g.a_sq, s2 * g.b_sq)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def grid64():
    return geo.make_grid(64)


@pytest.fixture(scope="session")
def grid128():
    return geo.make_grid(128)
