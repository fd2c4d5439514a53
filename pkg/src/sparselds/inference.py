"""Exact E-step: Kalman filter, RTS smoother, and a brute-force oracle.

The covariance recursions of the filter and smoother do not depend on the
observed values, so every routine here accepts either a single sequence
(``T x d``) or a stack of equal-length sequences (``N x T x d``). Means gain
the leading batch axis; covariances are shared by the whole stack.
"""

from dataclasses import dataclass

import numpy as np

from ._linalg import DEFAULT_JITTER, chol_solve, cholesky_jittered, symmetrize
from .core import ObservationSequence, require_valid
from .exceptions import NumericalFailureError, RejectedInputError

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class FilterResult:
    """Forward-pass output.

    ``filtered_means[..., t, :]`` is E[z_t | y_1..y_t] and
    ``predicted_means[..., t, :]`` is E[z_t | y_1..y_{t-1}] (the prior for
    t = 0). Covariance arrays have shape ``(T, l, l)``.
    """

    filtered_means: np.ndarray
    filtered_covs: np.ndarray
    predicted_means: np.ndarray
    predicted_covs: np.ndarray
    log_likelihood: object


class SmoothedStats:
    """Posterior moments given the whole sequence.

    ``zhat[t]`` = E[z_t|y], ``M[t]`` = E[z_t z_t'|y] and ``Mcross[t-1]`` =
    E[z_t z_{t-1}'|y] for t = 2..T (so ``Mcross`` has T-1 entries).

    Built either from explicit second moments or, as the smoother does, from
    posterior covariances that a stack of sequences can share; ``M`` and
    ``Mcross`` are then assembled on first access.
    """

    def __init__(self, zhat, M=None, Mcross=None, covs=None, cross_covs=None):
        self.zhat = zhat
        if M is None and covs is None:
            raise ValueError("SmoothedStats needs second moments or covariances")
        self._M, self._Mcross = M, Mcross
        self._covs, self._cross_covs = covs, cross_covs

    @property
    def shared_covs(self):
        """Posterior covariances ``(P, P_cross)`` when stored directly, else None."""
        if self._covs is None:
            return None
        return self._covs, self._cross_covs

    @property
    def M(self):
        if self._M is None:
            z = self.zhat
            self._M = self._covs + z[..., :, None] * z[..., None, :]
        return self._M

    @property
    def Mcross(self):
        if self._Mcross is None:
            z = self.zhat
            self._Mcross = self._cross_covs + z[..., 1:, :, None] * z[..., :-1, None, :]
        return self._Mcross

    @property
    def covs(self):
        """Smoothed covariances Cov(z_t | y)."""
        if self._covs is not None:
            return np.broadcast_to(self._covs, self.zhat.shape + self.zhat.shape[-1:])
        return self.M - self.zhat[..., :, None] * self.zhat[..., None, :]

    @property
    def T(self):
        return self.zhat.shape[-2]


def _as_array(y):
    if isinstance(y, ObservationSequence):
        return y.values
    a = np.asarray(y, dtype=float)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    return a


def kalman_filter(params, y, jitter=DEFAULT_JITTER):
    """Run the forward recursions with a Joseph-form covariance update.

    ``log_likelihood`` is log p(y_1..y_T | params), a scalar for one sequence
    or an ``(N,)`` array for a stack.
    """
    require_valid(params)
    Y = _as_array(y)
    if Y.shape[-1] != params.d:
        raise RejectedInputError(
            f"observation dimension {Y.shape[-1]} does not match model d={params.d}")
    T, d, l = Y.shape[-2], params.d, params.l
    if T < 1:
        raise RejectedInputError("empty observation sequence")
    batch = Y.shape[:-2]
    A, C, Q, R = params.A, params.C, params.Q, params.R
    eye = np.eye(l)

    m_f = np.empty(batch + (T, l))
    m_p = np.empty(batch + (T, l))
    P_f = np.empty((T, l, l))
    P_p = np.empty((T, l, l))
    loglik = np.zeros(batch)

    m = np.broadcast_to(params.pi1, batch + (l,)).copy()
    P = symmetrize(params.V1.copy())
    for t in range(T):
        m_p[..., t, :] = m
        P_p[t] = P
        S = symmetrize(C @ P @ C.T + R)
        L = cholesky_jittered(S, jitter, "innovation covariance", time_index=t)
        innov = Y[..., t, :] - m @ C.T
        # gain K = P C' S^-1
        K = chol_solve(L, C @ P).T
        w = chol_solve(L, innov.reshape(-1, d).T).T.reshape(innov.shape)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        loglik = loglik - 0.5 * (d * LOG_2PI + logdet + np.sum(innov * w, axis=-1))
        m = m + innov @ K.T
        IKC = eye - K @ C
        P = symmetrize(IKC @ P @ IKC.T + K @ R @ K.T)
        m_f[..., t, :] = m
        P_f[t] = P
        m = m @ A.T
        P = symmetrize(A @ P @ A.T + Q)

    if not np.all(np.isfinite(loglik)):
        raise NumericalFailureError("non-finite log-likelihood")
    if loglik.ndim == 0:
        loglik = float(loglik)
    return FilterResult(m_f, P_f, m_p, P_p, loglik)


def rts_smooth(params, filt, jitter=DEFAULT_JITTER):
    """Rauch-Tung-Striebel backward pass producing the E-step statistics."""
    A = params.A
    m_f, P_f = filt.filtered_means, filt.filtered_covs
    m_p, P_p = filt.predicted_means, filt.predicted_covs
    T, l = P_f.shape[0], P_f.shape[-1]

    m_s = np.empty_like(m_f)
    P_s = np.empty_like(P_f)
    cross = np.empty((max(T - 1, 0), l, l))
    m_s[..., T - 1, :] = m_f[..., T - 1, :]
    P_s[T - 1] = P_f[T - 1]
    for t in range(T - 2, -1, -1):
        L = cholesky_jittered(P_p[t + 1], jitter, "predicted state covariance",
                              time_index=t + 1)
        # smoother gain J = P_f[t] A' P_p[t+1]^-1
        J = chol_solve(L, A @ P_f[t]).T
        m_s[..., t, :] = m_f[..., t, :] + (m_s[..., t + 1, :] - m_p[..., t + 1, :]) @ J.T
        P_s[t] = symmetrize(P_f[t] + J @ (P_s[t + 1] - P_p[t + 1]) @ J.T)
        # Cov(z_{t+1}, z_t | y)
        cross[t] = P_s[t + 1] @ J.T

    return SmoothedStats(zhat=m_s, covs=P_s, cross_covs=cross)


def smooth(params, y, jitter=DEFAULT_JITTER):
    """Filter then smooth; returns ``(SmoothedStats, log_likelihood)``."""
    filt = kalman_filter(params, y, jitter)
    return rts_smooth(params, filt, jitter), filt.log_likelihood


def log_likelihood(params, y, jitter=DEFAULT_JITTER):
    """Log-likelihood of one sequence, or the sum over a list of sequences.

    Sequences in a list are independent given the parameters.
    """
    if isinstance(y, (list, tuple)) and all(
            isinstance(s, (ObservationSequence, np.ndarray)) for s in y):
        return float(sum(log_likelihood(params, s, jitter) for s in y))
    ll = kalman_filter(params, y, jitter).log_likelihood
    return float(np.sum(ll))


# -- oracle ------------------------------------------------------------------

ORACLE_MAX_SIZE = 64


def joint_gaussian(params, T):
    """Mean and covariance of the stacked vector (z_1..z_T, y_1..y_T).

    Built directly from the generative equations: z_t has mean A^{t-1} pi1,
    marginal covariance S_t = A S_{t-1} A' + Q, and Cov(z_s, z_t) =
    A^{s-t} S_t for s >= t.
    """
    A, C, Q, R = params.A, params.C, params.Q, params.R
    l, d = params.l, params.d
    mu_z = np.zeros(T * l)
    Sig = []
    m = params.pi1.copy()
    S = params.V1.copy()
    for t in range(T):
        mu_z[t * l:(t + 1) * l] = m
        Sig.append(S)
        m = A @ m
        S = A @ S @ A.T + Q
    Szz = np.zeros((T * l, T * l))
    for t in range(T):
        block = Sig[t]
        for s in range(t, T):
            Szz[s * l:(s + 1) * l, t * l:(t + 1) * l] = block
            Szz[t * l:(t + 1) * l, s * l:(s + 1) * l] = block.T
            block = A @ block
    H = np.kron(np.eye(T), C)
    mu_y = H @ mu_z
    Syy = H @ Szz @ H.T + np.kron(np.eye(T), R)
    Szy = Szz @ H.T
    return mu_z, mu_y, Szz, Szy, Syy


def brute_force_log_likelihood(params, y):
    """log p(y) from the explicit joint Gaussian over all observations."""
    Y = _as_array(y)
    T = Y.shape[0]
    _, mu_y, _, _, Syy = joint_gaussian(params, T)
    r = Y.reshape(-1) - mu_y
    sign, logdet = np.linalg.slogdet(Syy)
    if sign <= 0:
        raise NumericalFailureError("observation covariance is singular")
    return float(-0.5 * (r.size * LOG_2PI + logdet + r @ np.linalg.solve(Syy, r)))


def brute_force_smoother_oracle(params, y):
    """Posterior moments by conditioning the full joint Gaussian on y.

    Quadratic in T*l; guarded to ``T * l <= 64``.
    """
    require_valid(params)
    Y = _as_array(y)
    T, l = Y.shape[0], params.l
    if T * l > ORACLE_MAX_SIZE:
        raise RejectedInputError(f"oracle guard: T*l = {T * l} exceeds {ORACLE_MAX_SIZE}")
    mu_z, mu_y, Szz, Szy, Syy = joint_gaussian(params, T)
    gain = np.linalg.solve(Syy, Szy.T).T
    post_mean = mu_z + gain @ (Y.reshape(-1) - mu_y)
    post_cov = Szz - gain @ Szy.T
    post_cov = 0.5 * (post_cov + post_cov.T)

    zhat = post_mean.reshape(T, l)
    M = np.empty((T, l, l))
    Mcross = np.empty((T - 1, l, l))
    for t in range(T):
        blk = post_cov[t * l:(t + 1) * l, t * l:(t + 1) * l]
        M[t] = blk + np.outer(zhat[t], zhat[t])
    for t in range(1, T):
        blk = post_cov[t * l:(t + 1) * l, (t - 1) * l:t * l]
        Mcross[t - 1] = blk + np.outer(zhat[t], zhat[t - 1])
    return SmoothedStats(zhat=zhat, M=M, Mcross=Mcross)
