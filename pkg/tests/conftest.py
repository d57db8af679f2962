import numpy as np
import pytest

from emodel.model import EventModel
from emodel.zoo import SIGMA_X, SIGMA_MINUS, as_event_model, driven_qubit, two_sector_scalar


@pytest.fixture
def scalar():
    return two_sector_scalar(1.0)


@pytest.fixture
def qubit():
    return as_event_model(driven_qubit(1.0, 1.0))


def two_level(gamma=1.0, h=None):
    """Qubit sector 0 with Lambda = diag(gamma, 0), emptying into a scalar sector 1."""
    g = np.array([[np.sqrt(gamma), 0.0]])
    hams = {0: h} if h is not None else {}
    return EventModel([(0, 2), (1, 1)], hams, [(0, 1, g)])


def closed(h):
    return EventModel([(0, h.shape[0])], {0: h}, [])


def random_state(rng, d):
    v = rng.normal(size=d) + 1j * rng.normal(size=d)
    return v / np.linalg.norm(v)


def random_matrix(rng, m, n):
    return rng.normal(size=(m, n)) + 1j * rng.normal(size=(m, n))


def random_hermitian(rng, d):
    a = random_matrix(rng, d, d)
    return 0.5 * (a + a.conj().T)
