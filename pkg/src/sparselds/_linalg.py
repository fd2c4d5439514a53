"""Small dense linear-algebra helpers used by the filter and the M-step."""

import numpy as np
from scipy import linalg

from .exceptions import NumericalFailureError

DEFAULT_JITTER = 1e-9


def symmetrize(M):
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def floor_psd(M, floor=DEFAULT_JITTER):
    """Symmetrize ``M`` and clamp its eigenvalues from below at ``floor``."""
    S = symmetrize(M)
    w, V = np.linalg.eigh(S)
    if w.min() >= floor:
        return S
    w = np.maximum(w, floor)
    return symmetrize((V * w) @ V.T)


def cholesky_jittered(M, jitter=DEFAULT_JITTER, what="matrix", time_index=None):
    """Lower Cholesky factor of ``M``, retrying once with a diagonal jitter.

    The jitter is ``jitter * trace(M) / n``; an all-zero (or negative-trace)
    matrix uses unit scale instead so that degenerate covariances such as
    ``Q = 0`` can still be factored.
    """
    try:
        return linalg.cholesky(M, lower=True, check_finite=False)
    except linalg.LinAlgError:
        pass
    n = M.shape[0]
    scale = np.trace(M) / n
    if not np.isfinite(scale) or scale <= 0.0:
        scale = 1.0
    try:
        return linalg.cholesky(M + jitter * scale * np.eye(n), lower=True,
                               check_finite=False)
    except (linalg.LinAlgError, ValueError) as exc:
        where = "" if time_index is None else f" at time index {time_index}"
        raise NumericalFailureError(
            f"{what} is not positive definite{where} even after jitter",
            time_index=time_index) from exc


def chol_solve(L, B):
    """Solve ``(L L') X = B`` given the lower factor ``L``."""
    return linalg.cho_solve((L, True), B, check_finite=False)


def spd_inverse(M, jitter=DEFAULT_JITTER, what="matrix"):
    L = cholesky_jittered(M, jitter, what)
    return symmetrize(chol_solve(L, np.eye(M.shape[0])))


def cov_sqrt(S):
    """A factor ``F`` with ``F F' = S`` for any PSD ``S``, singular allowed."""
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(symmetrize(S))
        return V * np.sqrt(np.maximum(w, 0.0))
