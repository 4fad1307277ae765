import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from quantctl.density import from_gaussian, from_laplace, from_uniform

settings.register_profile(
    "default", max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.register_profile("thorough", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def gauss():
    return from_gaussian(0.0, 1.0, tail_mass=1e-12, points=2**14)


@pytest.fixture(scope="session")
def gauss_small():
    return from_gaussian(0.0, 1.0, tail_mass=1e-9, points=256)


@pytest.fixture(scope="session")
def unif():
    return from_uniform(0.0, 1.0, points=2**12)


@pytest.fixture(scope="session")
def laplace():
    return from_laplace(0.0, 1.0, points=2**13)


def moments(d):
    """Mean and variance by direct midpoint sums (independent of the core)."""
    x = d.midpoints
    w = d.values * d.step
    m = np.sum(w * x) / np.sum(w)
    # within-cell variance of a uniform cell adds step^2/12
    return m, np.sum(w * (x - m) ** 2) / np.sum(w) + d.step**2 / 12
