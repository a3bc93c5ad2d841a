import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from infharm import boundary_trace, build_grid, catalog_entry

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def segment():
    """[0, 1] with h = 1/32 and linear data."""
    g = build_grid(((0.0,), (1.0,)), 1 / 32)
    return g, boundary_trace(g, lambda x: float(x[0]))


@pytest.fixture(scope="session")
def square16():
    return build_grid(((0.0, 0.0), (1.0, 1.0)), 1 / 16)


@pytest.fixture(scope="session")
def square32():
    return build_grid(((0.0, 0.0), (1.0, 1.0)), 1 / 32)


@pytest.fixture(scope="session")
def cone_outside():
    return catalog_entry("cone", apex=(-0.5, -0.5))
