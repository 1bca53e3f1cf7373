import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from levy_hypar.grid import Grid1D

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def field_values(n):
    return arrays(np.float64, n, elements=finite)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def grid64():
    return Grid1D(64, 2.0)
