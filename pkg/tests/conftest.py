import math

import numpy as np
import pytest

from extwave import geometry as G
from extwave import solver as S


def fitted_box(spec, h, T):
    """Smallest node-aligned half-width that keeps the data's cone inside the box."""
    return math.ceil((spec.support_radius() + T + 2 * h) / h - 1e-9) * h


def make_state(p=3, h=0.1, T=1.0, spec=None, obstacle=True, L=None, lam=0.5):
    spec = spec or S.Gaussian((3.0, 0.0), 1.0, 1.0)
    L = fitted_box(spec, h, T) if L is None else L
    grid = G.GridSpec.make(h, L, lam)
    mask = G.build_mask(G.disk(1.0) if obstacle else None, grid)
    return S.make_initial(spec, grid, mask, p, T_final=T)


@pytest.fixture
def small_state():
    return make_state(h=0.2, T=2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
