import numpy as np
import pytest

from sparselds.core import ModelParams, spectral_radius


def random_spd(rng, n, scale=1.0, floor=0.1):
    B = rng.standard_normal((n, n))
    return scale * (B @ B.T / n + floor * np.eye(n))


def random_params(rng, l, d, radius=None):
    """Random valid model with a stable transition matrix."""
    A = rng.standard_normal((l, l))
    rho = spectral_radius(A)
    target = rng.uniform(0.3, 0.95) if radius is None else radius
    if rho > 0:
        A *= target / rho
    return ModelParams(A=A, C=rng.standard_normal((d, l)), Q=random_spd(rng, l, 0.5),
                       R=random_spd(rng, d, 0.5), pi1=rng.standard_normal(l),
                       V1=random_spd(rng, l))


def scalar_params(A=1.0, C=1.0, Q=0.0, R=1.0, pi1=0.0, V1=1.0):
    return ModelParams(A=A, C=C, Q=Q, R=R, pi1=pi1, V1=V1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
