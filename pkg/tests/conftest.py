import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

# make tests/oracles.py importable regardless of invocation directory
sys.path.insert(0, str(Path(__file__).parent))

from hessianma import geometry as geo

settings.register_profile(
    "ci",
    deadline=None,
    max_examples=25,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def circle():
    """R/Z with the flat potential x^2/2."""
    return geo.torus(dim=1)


@pytest.fixture(scope="session")
def torus2():
    return geo.torus(dim=2)


@pytest.fixture(scope="session")
def lb():
    return geo.log_barrier()


@pytest.fixture(scope="session")
def aniso_torus():
    """2d torus with non-unit metric and periods."""
    return geo.torus(dim=2, Q=np.diag([2.0, 0.5]), periods=np.array([1.0, 2.0]))
