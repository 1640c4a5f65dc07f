import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from selfcontact.template import build_capsule_person, default_model

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture(scope="session")
def coarse_model():
    return build_capsule_person()


@pytest.fixture(scope="session")
def dense_model():
    return default_model()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_pose(rng, scale=0.3):
    from selfcontact.body import PoseParams
    return PoseParams(rng.normal(0.0, scale, 63), rng.normal(0.0, 0.1, 3), rng.normal(0.0, 0.1, 3))
