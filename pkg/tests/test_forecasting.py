import numpy as np
import pytest

from sparselds.core import ModelParams, simulate
from sparselds.exceptions import RejectedInputError
from sparselds.forecasting import forecast, forecast_table
from sparselds.inference import kalman_filter

from conftest import random_params, scalar_params


def test_deterministic_doubling():
    p = scalar_params(A=2.0, Q=0.0, R=0.0, V1=0.0, pi1=1.0)
    fc = forecast(p, [[1.0]], 3)
    np.testing.assert_array_equal(fc.horizon_values.ravel(), [2.0, 4.0, 8.0])


def test_identity_dynamics_hold_last_state(rng):
    p = random_params(rng, 3, 2).replace(A=np.eye(3), Q=np.zeros((3, 3)))
    _, y = simulate(p, 6, seed=1)
    fc = forecast(p, y, 5)
    z = kalman_filter(p, y).filtered_means[-1]
    for yh in fc.horizon_values:
        np.testing.assert_allclose(yh, p.C @ z, atol=1e-12)


def test_one_step_equals_filter_prediction(rng):
    for _ in range(20):
        p = random_params(rng, 3, 2)
        _, y = simulate(p, 8, seed=rng)
        psi = int(rng.integers(1, 8))
        fc = forecast(p, y.prefix(psi), 1)
        f = kalman_filter(p, y)
        np.testing.assert_allclose(fc.horizon_values[0], p.C @ f.predicted_means[psi], atol=1e-12)
        np.testing.assert_allclose(fc.state_covs[0], f.predicted_covs[psi], atol=1e-12)


def test_covariance_recursion(rng):
    p = random_params(rng, 3, 2)
    _, y = simulate(p, 5, seed=2)
    fc = forecast(p, y, 6)
    for h in range(5):
        P_next = p.A @ fc.state_covs[h] @ p.A.T + p.Q
        np.testing.assert_allclose(fc.horizon_covs[h + 1], p.C @ P_next @ p.C.T + p.R,
                                   rtol=1e-12, atol=1e-12)
        np.testing.assert_array_equal(fc.horizon_covs[h], fc.horizon_covs[h].T)
        assert np.linalg.eigvalsh(fc.horizon_covs[h]).min() >= -1e-10


def test_monte_carlo_rollouts(rng):
    p = random_params(rng, 2, 2, radius=0.8)
    _, y = simulate(p, 6, seed=3)
    h, n = 4, 10**6
    fc = forecast(p, y, h)
    filt = kalman_filter(p, y)
    mc = np.random.default_rng(99)
    z = mc.multivariate_normal(filt.filtered_means[-1], filt.filtered_covs[-1], size=n)
    LQ, LR = np.linalg.cholesky(p.Q), np.linalg.cholesky(p.R)
    for k in range(h):
        z = z @ p.A.T + mc.standard_normal((n, 2)) @ LQ.T
        ys = z @ p.C.T + mc.standard_normal((n, 2)) @ LR.T
        se = ys.std(axis=0) / np.sqrt(n)
        assert np.all(np.abs(ys.mean(axis=0) - fc.horizon_values[k]) < 3 * se)


def test_table_matches_per_prefix_forecasts(rng):
    p = random_params(rng, 3, 2)
    Y = np.stack([simulate(p, 7, seed=s)[1].values for s in range(3)])
    table = forecast_table(p, Y)
    for n in range(3):
        for psi in range(1, 7):
            fc = forecast(p, Y[n, :psi], 7 - psi)
            np.testing.assert_allclose(table[n, psi - 1, :7 - psi], fc.horizon_values, atol=1e-12)
            assert np.isnan(table[n, psi - 1, 7 - psi:]).all()


def test_rejects_bad_horizon(rng):
    p = random_params(rng, 2, 1)
    with pytest.raises(RejectedInputError):
        forecast(p, [[0.0]], 0)
    with pytest.raises(RejectedInputError):
        forecast(p, np.zeros((0, 1)), 2)
