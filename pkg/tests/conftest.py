import numpy as np
import pytest

from fock_feedback.fock_core import DensityMatrix, DiagonalState
from fock_feedback.kraus import InteractionParams


@pytest.fixture
def params():
    return InteractionParams.reference()


@pytest.fixture
def rng():
    return np.random.default_rng(20121)


def random_diagonal(rng, max_dim=30, min_dim=1):
    dim = int(rng.integers(min_dim, max_dim + 1))
    # sparse-ish supports exercise n_min > 0 and interior zeros
    w = rng.dirichlet(np.ones(dim)) * (rng.random(dim) < 0.7)
    if w.sum() == 0:
        w[rng.integers(dim)] = 1.0
    return DiagonalState(w / w.sum())


def random_density(rng, max_dim=12, min_dim=2):
    dim = int(rng.integers(min_dim, max_dim + 1))
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    m = g @ g.conj().T
    return DensityMatrix(m / np.trace(m).real)
