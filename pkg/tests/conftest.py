import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sgldlab.models import generate_gaussian_data, generate_logreg_data

settings.register_profile("repo", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture(scope="session")
def gauss100():
    return generate_gaussian_data(100, 1.0, 1.0, seed=3, theta_true=1.0)


@pytest.fixture(scope="session")
def logreg_small():
    return generate_logreg_data(3, 200, 10.0, seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
