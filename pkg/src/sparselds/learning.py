"""MAP expectation-maximization for sparse linear dynamical systems.

The E-step is exact (Kalman filter + RTS smoother). The M-step updates C, R,
pi1 and V1 in closed form and then, alternating with the closed-form Q
update, minimizes

    f(A) = 1/2 sum_t E[(z_t - A z_{t-1})' Q^-1 (z_t - A z_{t-1})] + beta ||A||_1

by proximal gradient descent with the fixed step 1 / (||Q^-1||_F ||S_lag||_F),
where each step is a gradient step on the smooth part followed by
elementwise soft-thresholding. ``beta = 0`` gives ordinary maximum-likelihood
LDS learning.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from ._linalg import (DEFAULT_JITTER, chol_solve, cholesky_jittered, floor_psd,
                      spd_inverse, symmetrize)
from .core import ModelParams, ObservationSequence
from .exceptions import NumericalFailureError, RejectedInputError
from .inference import kalman_filter, rts_smooth

log = logging.getLogger(__name__)

ZERO_ENTRY_TOL = 1e-12
MONOTONE_TOL = 1e-8
R_INIT_FLOOR_FRACTION = 0.1
EXTRA_COLUMN_SCALE = 1.0


@dataclass(frozen=True, eq=False)
class PooledStats:
    """Sufficient statistics summed over time steps and sequences.

    S_lag = sum_{t>=2} M_{t-1}, S_cross = sum_{t>=2} M_{t,t-1},
    S_all = sum_{t>=1} M_t, S_tail = sum_{t>=2} M_t, S_yz = sum y_t zhat_t',
    S_yy = sum y_t y_t', plus initial-state sums over the N sequences.
    """

    S_lag: np.ndarray
    S_cross: np.ndarray
    S_all: np.ndarray
    S_tail: np.ndarray
    S_yz: np.ndarray
    S_yy: np.ndarray
    z1_sum: np.ndarray
    M1_sum: np.ndarray
    N: int
    T_total: int

    @property
    def l(self):
        return self.S_lag.shape[0]

    def scaled(self, k):
        """Every sum multiplied by ``k`` (as if each sequence appeared k times)."""
        names = ("S_lag", "S_cross", "S_all", "S_tail", "S_yz", "S_yy", "z1_sum", "M1_sum")
        kw = {n: k * getattr(self, n) for n in names}
        return PooledStats(**kw, N=self.N * k, T_total=self.T_total * k)


@dataclass
class FitConfig:
    l: int
    beta: float = 0.0
    em_max_iter: int = 200
    em_tol: float = 1e-6
    prox_max_iter: int = 500
    prox_tol: float = 1e-8
    jitter: float = DEFAULT_JITTER
    seed: int = 0

    def __post_init__(self):
        if int(self.l) < 1:
            raise RejectedInputError(f"l must be a positive integer, got {self.l}")
        if self.beta < 0:
            raise RejectedInputError(f"beta must be >= 0, got {self.beta}")
        for name in ("em_tol", "prox_tol", "jitter"):
            if not getattr(self, name) > 0:
                raise RejectedInputError(f"{name} must be > 0")
        for name in ("em_max_iter", "prox_max_iter"):
            if int(getattr(self, name)) < 1:
                raise RejectedInputError(f"{name} must be >= 1")
        self.l = int(self.l)

    def with_(self, **changes):
        return replace(self, **changes)


@dataclass
class FitDiagnostics:
    objective_trace: list = field(default_factory=list)
    prox_f_traces: list = field(default_factory=list)
    iterations_run: int = 0
    converged: bool = False
    zero_fraction_A: float = 0.0
    # (iteration index, decrease) for every objective drop beyond tolerance
    anomalies: list = field(default_factory=list)

    @property
    def final_objective(self):
        return self.objective_trace[-1] if self.objective_trace else float("nan")

    @property
    def anomaly_count(self):
        return len(self.anomalies)


# -- sufficient statistics ----------------------------------------------------

def pool_stats(stats_list, sequences):
    """Sum per-sequence smoothed statistics into a :class:`PooledStats`.

    Entries of ``stats_list`` may also be stacks (leading batch axis) aligned
    with a stacked ``(N, T, d)`` observation array; sums are taken in list
    order so the result is reproducible.
    """
    if len(stats_list) != len(sequences) or not stats_list:
        raise RejectedInputError(
            f"pool_stats needs aligned non-empty lists, got {len(stats_list)} stats "
            f"and {len(sequences)} sequences")
    acc = None
    N = T_total = 0
    for st, seq in zip(stats_list, sequences):
        Y = seq.values if isinstance(seq, ObservationSequence) else np.asarray(seq, float)
        if Y.shape[:-1] != st.zhat.shape[:-1]:
            raise RejectedInputError(
                f"sequence shape {Y.shape} does not match statistics shape {st.zhat.shape}")
        T, d = Y.shape[-2:]
        if T < 2:
            raise RejectedInputError("every sequence needs T >= 2 for learning")
        l = st.zhat.shape[-1]
        Y = Y.reshape(-1, T, d)
        zhat = st.zhat.reshape(-1, T, l)
        n = Y.shape[0]
        shared = st.shared_covs
        if shared is not None:
            # covariances are common to the stack: sum them once, scale by n
            P, Pc = shared
            zt = zhat.transpose(1, 0, 2)
            zz = np.swapaxes(zt, 1, 2) @ zt
            Mt = n * P + zz
            M_all = Mt.sum(axis=0)
            M_first, M_last = Mt[0], Mt[-1]
            S_cross = n * Pc.sum(axis=0) + (zhat[:, 1:].reshape(-1, l).T
                                            @ zhat[:, :-1].reshape(-1, l))
        else:
            M = st.M.reshape(-1, T, l, l)
            M_all = M.sum(axis=(0, 1))
            M_first, M_last = M[:, 0].sum(axis=0), M[:, -1].sum(axis=0)
            S_cross = st.Mcross.reshape(-1, T - 1, l, l).sum(axis=(0, 1))
        part = dict(
            S_all=M_all,
            S_tail=M_all - M_first,
            S_lag=M_all - M_last,
            S_cross=S_cross,
            S_yz=Y.reshape(-1, d).T @ zhat.reshape(-1, l),
            S_yy=Y.reshape(-1, d).T @ Y.reshape(-1, d),
            z1_sum=zhat[:, 0].sum(axis=0),
            M1_sum=M_first,
        )
        if acc is None:
            acc = part
        else:
            for k in acc:
                acc[k] = acc[k] + part[k]
        N += n
        T_total += n * T
    for k in ("S_all", "S_tail", "S_lag", "S_yy", "M1_sum"):
        acc[k] = symmetrize(acc[k])
    return PooledStats(**acc, N=N, T_total=T_total)


# -- M-step pieces ------------------------------------------------------------

def closed_form_updates(stats, A_for_Q, jitter=DEFAULT_JITTER):
    """Stationary-point updates for C, R, pi1, V1 and Q (given ``A_for_Q``).

    Returns ``(C, R, pi1, V1, Q)``; covariances are symmetrized and floored
    to be positive semi-definite with minimum eigenvalue ``jitter``.
    """
    L = cholesky_jittered(stats.S_all, jitter, "pooled state second moment S_all")
    C = chol_solve(L, stats.S_yz.T).T
    R = (stats.S_yy - C @ stats.S_yz.T) / stats.T_total
    n_trans = stats.T_total - stats.N
    if n_trans <= 0:
        raise RejectedInputError("no transitions in the data (all sequences have T = 1)")
    A = np.asarray(A_for_Q, dtype=float)
    Q = (stats.S_tail - A @ stats.S_cross.T) / n_trans
    pi1 = stats.z1_sum / stats.N
    V1 = stats.M1_sum / stats.N - np.outer(pi1, pi1)
    return (C, floor_psd(R, jitter), pi1, floor_psd(V1, jitter), floor_psd(Q, jitter))


def init_A_closed_form(stats, jitter=DEFAULT_JITTER):
    """Unpenalized maximizer A = S_cross S_lag^-1."""
    L = cholesky_jittered(stats.S_lag, jitter, "pooled lagged second moment S_lag")
    return chol_solve(L, stats.S_cross.T).T


def _q_inverse(Q, jitter=DEFAULT_JITTER):
    return spd_inverse(np.asarray(Q, dtype=float), jitter, "state noise covariance Q")


def grad_g(A, Q, stats, Qinv=None):
    """Gradient of the smooth part: Q^-1 (A S_lag - S_cross)."""
    if Qinv is None:
        Qinv = _q_inverse(Q)
    return Qinv @ (A @ stats.S_lag - stats.S_cross)


def g_value(A, Q, stats, Qinv=None):
    if Qinv is None:
        Qinv = _q_inverse(Q)
    AX = A @ stats.S_cross.T
    inner = stats.S_tail - AX - AX.T + A @ stats.S_lag @ A.T
    return 0.5 * float(np.sum(Qinv * inner))


def f_objective(A, Q, stats, beta, Qinv=None):
    """g(A) + beta * sum |A_ij| with g expanded through the pooled statistics."""
    return g_value(A, Q, stats, Qinv) + beta * float(np.abs(A).sum())


def lipschitz_step(Q, stats, Qinv=None):
    """Fixed step 1 / (||Q^-1||_F * ||S_lag||_F)."""
    if Qinv is None:
        Qinv = _q_inverse(Q)
    norm_lag = np.linalg.norm(stats.S_lag, "fro")
    if norm_lag == 0.0:
        raise RejectedInputError("S_lag is zero; the step size is undefined")
    return 1.0 / (np.linalg.norm(Qinv, "fro") * norm_lag)


def soft_threshold(A, tau):
    if tau < 0:
        raise RejectedInputError(f"threshold must be >= 0, got {tau}")
    A = np.asarray(A, dtype=float)
    return np.sign(A) * np.maximum(np.abs(A) - tau, 0.0)


def prox_gradient_A(A0, Q, stats, beta, cfg, Qinv=None):
    """Minimize f(A) by ISTA from ``A0``; returns ``(A, f_trace)``.

    ``f_trace[k]`` is f at the k-th iterate, ``f_trace[0] = f(A0)``. Stops
    when the relative Frobenius change of A drops below ``cfg.prox_tol``.
    """
    if Qinv is None:
        Qinv = _q_inverse(Q, cfg.jitter)
    alpha = lipschitz_step(Q, stats, Qinv)
    tau = beta * alpha
    S_lag = stats.S_lag
    # with G = Q^-1 S_cross and H(A) = Q^-1 A S_lag:
    #   grad g(A) = H(A) - G
    #   g(A) = tr(Q^-1 S_tail)/2 - <A, G> + <A, H(A)>/2
    G = Qinv @ stats.S_cross
    g0 = 0.5 * float(np.sum(Qinv * stats.S_tail))

    def value_and_grad(A):
        H = Qinv @ (A @ S_lag)
        f = g0 - np.vdot(A, G) + 0.5 * np.vdot(A, H) + beta * np.abs(A).sum()
        return f, H - G

    A = np.array(A0, dtype=float)
    f, grad = value_and_grad(A)
    f_trace = [float(f)]
    for _ in range(cfg.prox_max_iter):
        B = A - alpha * grad
        A_new = np.sign(B) * np.maximum(np.abs(B) - tau, 0.0)
        f, grad = value_and_grad(A_new)
        f_trace.append(float(f))
        diff = (A_new - A).ravel()
        change = np.sqrt(diff @ diff)
        scale = np.sqrt(np.vdot(A, A))
        A = A_new
        if change <= cfg.prox_tol * scale or change == 0.0:
            break
    return A, f_trace


def q_update(stats, A, jitter=DEFAULT_JITTER):
    """Maximizer of the expected transition log-likelihood over Q for fixed A.

    Uses the full expansion, which reduces to (S_tail - A S_cross') / (T - N)
    when A is the least-squares transition matrix.
    """
    n_trans = stats.T_total - stats.N
    if n_trans <= 0:
        raise RejectedInputError("no transitions in the data (all sequences have T = 1)")
    AX = A @ stats.S_cross.T
    Q = (stats.S_tail - AX - AX.T + A @ stats.S_lag @ A.T) / n_trans
    return floor_psd(Q, jitter)


def m_step(stats, beta, cfg, A_prev=None):
    """One full M-step; returns ``(ModelParams, f_trace)``.

    C, R, pi1 and V1 take their closed forms. (A, Q) are updated by block
    coordinate ascent: Q is maximized at ``A_prev``, A by proximal gradient
    started from the least-squares solution, then Q again at the new A. Each
    block can only increase the penalized objective. With ``beta = 0`` the
    result is the ordinary joint maximizer (A_ls, Q(A_ls)).
    """
    A_ls = init_A_closed_form(stats, cfg.jitter)
    C, R, pi1, V1, Q_ls = closed_form_updates(stats, A_ls, cfg.jitter)
    if A_prev is None or beta == 0:
        Q_fix = Q_ls
    else:
        Q_fix = q_update(stats, A_prev, cfg.jitter)
    Qinv = _q_inverse(Q_fix, cfg.jitter)
    A, f_trace = prox_gradient_A(A_ls, Q_fix, stats, beta, cfg, Qinv)
    if A_prev is not None and beta > 0:
        f_prev = f_objective(A_prev, Q_fix, stats, beta, Qinv)
        if f_trace[-1] > f_prev:
            # prox budget ran out above the old iterate: continue from there
            A_alt, f_alt = prox_gradient_A(A_prev, Q_fix, stats, beta, cfg, Qinv)
            if f_alt[-1] < f_trace[-1]:
                A, f_trace = A_alt, f_alt
    Q = Q_ls if beta == 0 else q_update(stats, A, cfg.jitter)
    return ModelParams(A=A, C=C, Q=Q, R=R, pi1=pi1, V1=V1), f_trace


# -- E-step over many sequences -------------------------------------------------

def group_by_length(sequences):
    """Stack sequences of equal length: list of ``(indices, (n, T, d) array)``.

    Groups are ordered by first appearance, indices ascending, so reductions
    over groups are deterministic.
    """
    groups = {}
    for i, s in enumerate(sequences):
        groups.setdefault(s.T, []).append(i)
    return [(idx, np.stack([sequences[i].values for i in idx])) for idx in groups.values()]


def e_step(params, groups, jitter=DEFAULT_JITTER):
    """Smoothed statistics for each stacked group; returns ``(PooledStats, loglik)``."""
    stats, data = [], []
    ll = 0.0
    for _, Y in groups:
        filt = kalman_filter(params, Y, jitter)
        stats.append(rts_smooth(params, filt, jitter))
        data.append(Y)
        ll += float(np.sum(filt.log_likelihood))
    return pool_stats(stats, data), ll


def penalized_objective(loglik, A, beta):
    """Log-likelihood plus log-prior of A without its additive constant."""
    if beta == 0:
        return loglik
    return loglik - beta * float(np.abs(A).sum())


# -- initialization ---------------------------------------------------------------

def init_params(sequences, l, seed=0):
    """Deterministic PCA-style starting point for EM.

    C holds the top principal directions of the pooled, mean-centered
    observations scaled by (singular value / sqrt(n)); when ``l`` exceeds the
    number of available directions the extra columns are seeded random draws
    of comparable scale. A = 0.5 I, Q = I, V1 = I, R is the diagonal residual
    variance (floored at 10% of each variable's variance, and at 1e-6) and
    pi1 the least-squares preimage of the mean first observation.
    """
    Y = np.concatenate([s.values for s in sequences], axis=0)
    n, d = Y.shape
    if n < l:
        raise RejectedInputError(f"need at least l={l} pooled observations, got {n}")
    Yc = Y - Y.mean(axis=0)
    _, svals, Vt = np.linalg.svd(Yc, full_matrices=False)
    k = min(l, Vt.shape[0])
    dirs = Vt[:k].T.copy()
    for j in range(k):
        if dirs[np.argmax(np.abs(dirs[:, j])), j] < 0:
            dirs[:, j] = -dirs[:, j]
    scales = svals[:k] / np.sqrt(n)
    C = np.zeros((d, l))
    C[:, :k] = dirs * scales
    if l > k:
        rng = np.random.default_rng(seed)
        ref = scales.mean() if scales.size and scales.mean() > 0 else 1.0
        C[:, k:] = EXTRA_COLUMN_SCALE * ref * rng.standard_normal((d, l - k)) / np.sqrt(d)
    proj = Yc @ dirs @ dirs.T
    # an (almost) exact projection would start EM at the R = 0 fixed point
    floor = np.maximum(R_INIT_FLOOR_FRACTION * np.var(Yc, axis=0), 1e-6)
    R = np.diag(np.maximum(np.var(Yc - proj, axis=0), floor))
    y1 = np.mean([s.values[0] for s in sequences], axis=0)
    pi1 = np.linalg.lstsq(C, y1, rcond=None)[0]
    return ModelParams(A=0.5 * np.eye(l), C=C, Q=np.eye(l), R=R, pi1=pi1, V1=np.eye(l))


# -- EM driver --------------------------------------------------------------------

def _check_sequences(sequences):
    if not sequences:
        raise RejectedInputError("em_fit needs at least one sequence")
    d = sequences[0].d
    for s in sequences:
        if s.d != d:
            raise RejectedInputError(
                f"series {s.series_id!r} has dimension {s.d}, expected {d}")
        if s.T < 2:
            raise RejectedInputError(f"series {s.series_id!r} has length {s.T} < 2")


def em_fit(sequences, cfg, init=None, callback=None):
    """Fit a (sparse) LDS by MAP-EM.

    Parameters
    ----------
    sequences : list of ObservationSequence
    cfg : FitConfig
    init : ModelParams, optional
        Starting point; defaults to :func:`init_params`.
    callback : callable, optional
        Called as ``callback(iteration, params)`` with the parameters entering
        each E-step (iteration 0 is the initialization).

    Returns
    -------
    params : ModelParams
        The parameters whose objective is the last entry of the trace.
    diagnostics : FitDiagnostics
    """
    sequences = list(sequences)
    _check_sequences(sequences)
    params = init if init is not None else init_params(sequences, cfg.l, cfg.seed)
    groups = group_by_length(sequences)
    diag = FitDiagnostics()
    prev = None
    for it in range(cfg.em_max_iter + 1):
        if callback is not None:
            callback(it, params)
        try:
            stats, ll = e_step(params, groups, cfg.jitter)
        except NumericalFailureError as exc:
            exc.iteration = it
            raise NumericalFailureError(f"E-step failed at EM iteration {it}: {exc}",
                                        time_index=exc.time_index, iteration=it) from exc
        obj = penalized_objective(ll, params.A, cfg.beta)
        diag.objective_trace.append(obj)
        if prev is not None:
            scale = 1.0 + abs(prev)
            if obj < prev - MONOTONE_TOL * scale:
                diag.anomalies.append((it, prev - obj))
                log.warning("objective decreased by %.3g at EM iteration %d", prev - obj, it)
            if abs(obj - prev) / (1.0 + abs(obj)) < cfg.em_tol:
                diag.converged = True
                break
        if it == cfg.em_max_iter:
            break
        prev = obj
        try:
            params, f_trace = m_step(stats, cfg.beta, cfg, A_prev=params.A)
        except NumericalFailureError as exc:
            raise NumericalFailureError(f"M-step failed at EM iteration {it}: {exc}",
                                        iteration=it) from exc
        diag.prox_f_traces.append(f_trace)
        diag.iterations_run = it + 1
    diag.zero_fraction_A = float(np.mean(np.abs(params.A) < ZERO_ENTRY_TOL))
    return params, diag
