import numpy as np
import pytest

from blowup.geometry import Annulus, Ball, Perforated
from blowup.green import build_engine


@pytest.fixture(scope="session")
def ball3():
    return Ball(np.zeros(3), 1.0)


@pytest.fixture(scope="session")
def image3(ball3):
    return build_engine(ball3)


@pytest.fixture(scope="session")
def ring3(ball3):
    return build_engine(ball3, method="collocation", tol=1e-8)


@pytest.fixture(scope="session")
def annulus3():
    return Annulus(np.zeros(3), 0.3, 1.0)


@pytest.fixture(scope="session")
def holed3():
    return Perforated(Ball(np.zeros(3), 1.0), np.zeros(3), 0.1)


def image_G(x, y, n=3):
    """Closed-form Green's function of the unit ball centred at the origin."""
    from blowup.geometry import green_constant

    c = green_constant(n)
    x, y = np.asarray(x, float), np.asarray(y, float)
    ny = np.linalg.norm(y)
    r = np.linalg.norm(x - y)
    if ny < 1e-14:
        return c * (r ** (2 - n) - 1.0)
    return c * (r ** (2 - n) - (ny * np.linalg.norm(x - y / ny**2)) ** (2 - n))
