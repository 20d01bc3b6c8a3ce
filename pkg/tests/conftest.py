import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_stable(rng, dim, margin=(0.3, 2.0)):
    """Random non-normal stable matrix with eigenvalue imaginary parts of order one."""
    M = rng.standard_normal((dim, dim)) / np.sqrt(dim)
    shift = np.max(np.linalg.eigvals(M).real) + rng.uniform(*margin)
    return M - shift * np.eye(dim)


def random_diffusion(rng, dim):
    return rng.standard_normal((dim, dim)) / np.sqrt(dim) + np.eye(dim)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
