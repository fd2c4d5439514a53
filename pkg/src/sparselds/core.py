"""Model parameters, observation containers, and simulation of the LDS

    z_t = A z_{t-1} + e_t,   e_t ~ N(0, Q)
    y_t = C z_t + v_t,       v_t ~ N(0, R)
    z_1 ~ N(pi1, V1)
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from ._linalg import cov_sqrt, symmetrize
from .exceptions import RejectedInputError

PSD_TOL = 1e-10


def _frozen(x, ndim):
    a = np.array(x, dtype=float)
    if ndim == 2 and a.ndim < 2:
        a = a.reshape(1, -1) if a.ndim == 1 else a.reshape(1, 1)
    elif ndim == 1 and a.ndim == 0:
        a = a.reshape(1)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Complete parameter set {A, C, Q, R, pi1, V1} of one (sparse) LDS.

    Scalars are accepted and promoted to 1x1 matrices. Arrays are copied and
    made read-only, so instances can be shared freely.
    """

    A: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    pi1: np.ndarray
    V1: np.ndarray

    def __post_init__(self):
        for name in ("A", "C", "Q", "R", "V1"):
            object.__setattr__(self, name, _frozen(getattr(self, name), 2))
        object.__setattr__(self, "pi1", _frozen(self.pi1, 1))

    @property
    def l(self):
        return self.A.shape[0]

    @property
    def d(self):
        return self.C.shape[0]

    def replace(self, **changes):
        kw = {k: getattr(self, k) for k in ("A", "C", "Q", "R", "pi1", "V1")}
        kw.update(changes)
        return ModelParams(**kw)

    def to_dict(self):
        return {k: getattr(self, k).tolist()
                for k in ("A", "C", "Q", "R", "pi1", "V1")}

    def allclose(self, other, atol=1e-12):
        return all(np.allclose(getattr(self, k), getattr(other, k), rtol=0, atol=atol)
                   for k in ("A", "C", "Q", "R", "pi1", "V1"))


@dataclass(frozen=True, eq=False)
class ObservationSequence:
    """One regularly sampled series; row ``t`` of ``values`` is y_t."""

    values: np.ndarray
    series_id: object = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v.reshape(-1, 1)
        if v.ndim != 2 or v.shape[0] < 1:
            raise RejectedInputError(f"observations must be a non-empty T x d matrix, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise RejectedInputError(f"series {self.series_id!r} contains missing or non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def T(self):
        return self.values.shape[0]

    @property
    def d(self):
        return self.values.shape[1]

    def __len__(self):
        return self.T

    def prefix(self, length):
        return ObservationSequence(self.values[:length], self.series_id)


@dataclass(frozen=True, eq=False)
class StateSequence:
    """Hidden-state trajectory; row ``t`` is z_t."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = field(default_factory=tuple)

    @property
    def ok(self):
        return not self.violations

    def __bool__(self):
        return self.ok


def _min_eig(M):
    return float(np.linalg.eigvalsh(symmetrize(M)).min())


def validate_params(params):
    """Check shapes, finiteness, and PSD-ness of the covariances.

    Violations are returned, not raised.
    """
    out = []
    A, C, Q, R, pi1, V1 = params.A, params.C, params.Q, params.R, params.pi1, params.V1
    l = A.shape[0]
    if A.shape[0] != A.shape[1]:
        out.append(f"A is not square (shape {A.shape})")
    d = C.shape[0]
    if C.shape[1] != l:
        out.append(f"C column count {C.shape[1]} != l={l}")
    if Q.shape != (l, l):
        out.append(f"Q shape {Q.shape} != ({l}, {l})")
    if R.shape != (d, d):
        out.append(f"R shape {R.shape} != ({d}, {d})")
    if pi1.shape != (l,):
        out.append(f"pi1 length {pi1.shape[0]} != l={l}")
    if V1.shape != (l, l):
        out.append(f"V1 shape {V1.shape} != ({l}, {l})")
    for name in ("A", "C", "Q", "R", "pi1", "V1"):
        if not np.all(np.isfinite(getattr(params, name))):
            out.append(f"{name} has non-finite entries")
    for name in ("Q", "R", "V1"):
        M = getattr(params, name)
        if M.ndim != 2 or M.shape[0] != M.shape[1] or not np.all(np.isfinite(M)):
            continue
        if not np.allclose(M, M.T, rtol=0, atol=1e-10 * max(1.0, np.abs(M).max())):
            out.append(f"{name} not symmetric")
        elif _min_eig(M) < -PSD_TOL:
            out.append(f"{name} not PSD")
    return ValidationReport(tuple(out))


def require_valid(params):
    report = validate_params(params)
    if not report.ok:
        raise RejectedInputError("invalid model parameters: " + "; ".join(report.violations))


def spectral_radius(A):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(linalg.eigvals(A))))


def simulate(params, T, seed):
    """Draw one trajectory of length ``T``.

    Returns ``(StateSequence, ObservationSequence)``. Noise factors come from
    a Cholesky factor, falling back to a clamped eigendecomposition for
    singular covariances, so ``Q = 0`` or ``V1 = 0`` give exact noiseless runs.
    """
    require_valid(params)
    if int(T) < 1:
        raise RejectedInputError(f"T must be >= 1, got {T}")
    T = int(T)
    rng = np.random.default_rng(seed)
    A, C = params.A, params.C
    l, d = params.l, params.d
    FV, FQ, FR = cov_sqrt(params.V1), cov_sqrt(params.Q), cov_sqrt(params.R)

    z = np.empty((T, l))
    y = np.empty((T, d))
    z[0] = params.pi1 + FV @ rng.standard_normal(l)
    for t in range(1, T):
        z[t] = A @ z[t - 1] + FQ @ rng.standard_normal(l)
    y[:] = z @ C.T + rng.standard_normal((T, d)) @ FR.T
    return StateSequence(z), ObservationSequence(y)


def stationary_covariance(A, Q):
    """Solution of the discrete Lyapunov equation S = A S A' + Q."""
    return symmetrize(linalg.solve_discrete_lyapunov(np.asarray(A), np.asarray(Q)))


def random_sparse_model(l, d, sparsity=0.5, seed=0, radius=0.9,
                        state_noise=0.1, obs_noise=0.1, initial_variance=None):
    """Random stable model whose transition matrix has a given zero fraction.

    ``round(sparsity * l * l)`` entries of A are set to zero, then A is
    rescaled to spectral radius ``radius``. C has i.i.d. standard normal
    entries, Q and R are isotropic with the given variances and pi1 = 0. V1
    is the stationary state covariance, or ``initial_variance * I`` when
    given (series then start away from equilibrium and relax towards it).
    """
    if not 0.0 <= sparsity < 1.0:
        raise RejectedInputError(f"sparsity must be in [0, 1), got {sparsity}")
    rng = np.random.default_rng(seed)
    n_zero = int(round(sparsity * l * l))
    for _ in range(1000):
        A = rng.standard_normal((l, l))
        mask = np.ones(l * l, dtype=bool)
        mask[rng.permutation(l * l)[:n_zero]] = False
        A = A * mask.reshape(l, l)
        rho = spectral_radius(A)
        if rho > 1e-3:
            break
    else:  # pragma: no cover - practically unreachable
        raise RejectedInputError("could not draw a non-nilpotent sparse transition matrix")
    A = A * (radius / rho)
    C = rng.standard_normal((d, l))
    Q = state_noise * np.eye(l)
    R = obs_noise * np.eye(d)
    if initial_variance is None:
        V1 = stationary_covariance(A, Q)
    else:
        V1 = float(initial_variance) * np.eye(l)
    return ModelParams(A=A, C=C, Q=Q, R=R, pi1=np.zeros(l), V1=V1)


def simulate_dataset(params, n_series, T, seed):
    """``n_series`` independent observation sequences with ids 0..n-1."""
    seeds = np.random.SeedSequence(seed).spawn(n_series)
    out = []
    for i, s in enumerate(seeds):
        _, y = simulate(params, T, np.random.default_rng(s))
        out.append(ObservationSequence(y.values, series_id=i))
    return out
