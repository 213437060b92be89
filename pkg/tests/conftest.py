import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "fast",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("fast")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_density(rng, dim: int) -> np.ndarray:
    """Full-rank random density matrix via a Wishart draw."""
    x = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    m = x @ x.conj().T
    return m / np.trace(m).real
