import numpy as np
import pytest

from sparselds.core import (ModelParams, ObservationSequence, random_sparse_model, simulate,
                            simulate_dataset, spectral_radius, stationary_covariance,
                            validate_params)
from sparselds.exceptions import RejectedInputError

from conftest import random_params, scalar_params


def identity_model(l=2, d=1):
    return ModelParams(A=np.eye(l), C=np.ones((d, l)), Q=np.eye(l), R=np.eye(d),
                       pi1=np.zeros(l), V1=np.eye(l))


class TestValidateParams:
    def test_identity_model_ok(self):
        assert validate_params(identity_model()).ok

    def test_indefinite_q(self):
        p = identity_model().replace(Q=[[1.0, 2.0], [2.0, 1.0]])
        report = validate_params(p)
        assert not report.ok
        assert "Q not PSD" in report.violations

    def test_wrong_c_columns(self):
        p = identity_model().replace(C=np.ones((2, 3)))
        msgs = validate_params(p).violations
        assert any(m.startswith("C column count") for m in msgs)

    def test_tiny_negative_eigenvalue_tolerated(self):
        p = identity_model().replace(Q=np.diag([1.0, -5e-11]))
        assert validate_params(p).ok
        p = identity_model().replace(Q=np.diag([1.0, -5e-9]))
        assert "Q not PSD" in validate_params(p).violations

    def test_asymmetric_and_nonfinite(self):
        p = identity_model().replace(R=[[np.nan]], V1=[[1.0, 0.5], [0.0, 1.0]])
        msgs = validate_params(p).violations
        assert "R has non-finite entries" in msgs
        assert "V1 not symmetric" in msgs

    def test_params_are_read_only(self):
        p = identity_model()
        with pytest.raises(ValueError):
            p.A[0, 0] = 5.0


class TestSpectralRadius:
    @pytest.mark.parametrize("A, expected", [
        (np.eye(3), 1.0),
        (np.zeros((2, 2)), 0.0),
        ([[0.0, 1.0], [-0.81, 0.0]], 0.9),
    ])
    def test_examples(self, A, expected):
        assert spectral_radius(A) == pytest.approx(expected, rel=1e-8, abs=1e-15)


class TestSimulate:
    def test_noiseless_fixed_point(self):
        c = np.array([1.5, -2.0])
        p = ModelParams(A=np.eye(2), C=np.eye(2), Q=np.zeros((2, 2)), R=np.zeros((2, 2)),
                        pi1=c, V1=np.zeros((2, 2)))
        z, y = simulate(p, 7, seed=3)
        np.testing.assert_array_equal(z.values, np.tile(c, (7, 1)))
        np.testing.assert_array_equal(y.values, np.tile(c, (7, 1)))

    def test_deterministic_doubling(self):
        p = scalar_params(A=2.0, Q=0.0, R=0.0, pi1=1.0, V1=0.0)
        _, y = simulate(p, 4, seed=0)
        np.testing.assert_array_equal(y.values.ravel(), [1.0, 2.0, 4.0, 8.0])

    def test_noiseless_matches_power_formula(self, rng):
        for _ in range(5):
            p = random_params(rng, 3, 2).replace(Q=np.zeros((3, 3)), R=np.zeros((2, 2)),
                                                 V1=np.zeros((3, 3)))
            _, y = simulate(p, 50, seed=1)
            z = p.pi1.copy()
            for t in range(50):
                expected = p.C @ z
                np.testing.assert_allclose(y.values[t], expected, rtol=1e-12,
                                           atol=1e-12 * np.abs(expected).max())
                z = p.A @ z

    def test_same_seed_bitwise_identical(self, rng):
        p = random_params(rng, 3, 2)
        a = simulate(p, 20, seed=11)
        b = simulate(p, 20, seed=11)
        c = simulate(p, 20, seed=12)
        assert a[1].values.tobytes() == b[1].values.tobytes()
        assert a[0].values.tobytes() == b[0].values.tobytes()
        assert a[1].values.tobytes() != c[1].values.tobytes()

    def test_stationary_covariance_of_long_run(self):
        # Oracle: fixed-point iteration of S <- A S A' + Q, independent of scipy.
        A = np.array([[0.5, 0.4], [-0.3, 0.6]])
        A *= 0.9 / spectral_radius(A)
        Q = np.array([[1.0, 0.2], [0.2, 0.5]])
        S = np.zeros((2, 2))
        for _ in range(2000):
            S = A @ S @ A.T + Q
        np.testing.assert_allclose(stationary_covariance(A, Q), S, rtol=1e-10)

        p = ModelParams(A=A, C=np.eye(2), Q=Q, R=np.eye(2), pi1=np.zeros(2), V1=S)
        z, _ = simulate(p, 10_000, seed=5)
        emp = np.cov(z.values.T)
        # Autocorrelated samples inflate the error; 15% of the scale is many
        # standard errors at radius 0.9 and 1e4 steps.
        assert np.abs(emp - S).max() < 0.15 * np.abs(S).max()

    def test_invalid_params_rejected(self):
        p = identity_model().replace(Q=[[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(RejectedInputError, match="Q not PSD"):
            simulate(p, 5, seed=0)
        with pytest.raises(RejectedInputError):
            simulate(identity_model(), 0, seed=0)


class TestRandomSparseModel:
    @pytest.mark.parametrize("l, sparsity", [(4, 0.5), (6, 0.25), (3, 0.0)])
    def test_zero_fraction_and_radius(self, l, sparsity):
        p = random_sparse_model(l, 3, sparsity, seed=7)
        assert np.sum(p.A == 0) == round(sparsity * l * l)
        assert spectral_radius(p.A) == pytest.approx(0.9, rel=1e-10)
        assert validate_params(p).ok

    def test_seeded(self):
        a = random_sparse_model(4, 3, seed=1)
        b = random_sparse_model(4, 3, seed=1)
        assert a.allclose(b, atol=0)

    def test_dataset_ids_and_shapes(self):
        p = random_sparse_model(4, 3, seed=1)
        data = simulate_dataset(p, 5, 12, seed=2)
        assert [s.series_id for s in data] == list(range(5))
        assert all(s.values.shape == (12, 3) for s in data)


class TestObservationSequence:
    def test_rejects_missing_values(self):
        with pytest.raises(RejectedInputError, match="non-finite"):
            ObservationSequence([[1.0], [np.nan]])

    def test_prefix(self):
        s = ObservationSequence(np.arange(6.0).reshape(3, 2), series_id="a")
        assert s.prefix(2).T == 2 and s.prefix(2).series_id == "a"
