"""Multi-step-ahead prediction from a filtered state."""

from dataclasses import dataclass

import numpy as np

from ._linalg import symmetrize
from .core import require_valid
from .exceptions import RejectedInputError
from .inference import _as_array, kalman_filter


@dataclass(frozen=True, eq=False)
class Forecast:
    """Predictions for the ``h`` steps following the prefix.

    ``horizon_values[k]`` is the predicted observation k+1 steps after the
    last seen one; ``horizon_covs[k]`` its predictive covariance.
    """

    horizon_values: np.ndarray
    horizon_covs: np.ndarray
    state_means: np.ndarray
    state_covs: np.ndarray


def propagate(params, z, P, h):
    """Push a state estimate (z, P) forward ``h`` steps.

    Returns ``(obs_means, obs_covs, state_means, state_covs)`` for steps
    1..h. Powers of A are applied one product at a time.
    """
    A, C, Q, R = params.A, params.C, params.Q, params.R
    zs = np.empty((h, params.l))
    Ps = np.empty((h, params.l, params.l))
    for k in range(h):
        z = A @ z
        P = symmetrize(A @ P @ A.T + Q)
        zs[k] = z
        Ps[k] = P
    ys = zs @ C.T
    Ss = symmetrize(C @ Ps @ C.T + R)
    return ys, Ss, zs, Ps


def forecast(params, prefix, h):
    """Filter the observed prefix and predict the next ``h`` observations."""
    require_valid(params)
    Y = _as_array(prefix)
    if Y.ndim != 2 or Y.shape[0] < 1:
        raise RejectedInputError("forecast needs a prefix of at least one observation")
    if int(h) < 1:
        raise RejectedInputError(f"horizon must be a positive integer, got {h}")
    filt = kalman_filter(params, Y)
    ys, Ss, zs, Ps = propagate(params, filt.filtered_means[-1], filt.filtered_covs[-1], int(h))
    return Forecast(ys, Ss, zs, Ps)


def forecast_table(params, Y):
    """All point forecasts for a stack of equal-length series at once.

    ``Y`` is ``(N, T, d)``. Returns ``out`` of shape ``(N, T, T, d)`` with
    ``out[n, psi - 1, h - 1]`` the mean forecast of y_{psi+h} given
    y_1..y_psi (entries with psi + h > T are left as NaN). Identical to
    calling :func:`forecast` for every prefix, but with one filter pass.
    """
    filt = kalman_filter(params, Y)
    N, T, _ = Y.shape
    A, C = params.A, params.C
    out = np.full((N, T, T, params.d), np.nan)
    z = filt.filtered_means
    for h in range(1, T):
        z = z @ A.T
        out[:, :T - h, h - 1] = z[:, :T - h] @ C.T
    return out
