"""Prediction-task benchmark: sample (psi, phi) tasks, score by AMAE, sweep
OLDS (beta = 0) against sparse fits over hidden-state counts."""

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import RejectedInputError, SparseLDSError
from .forecasting import forecast_table
from .learning import FitConfig, em_fit, group_by_length

log = logging.getLogger(__name__)

OLDS, SLDS = "OLDS", "SLDS"


@dataclass(frozen=True)
class PredictionTask:
    """Predict observation ``phi`` having seen observations 1..``psi`` (1-based)."""

    series_index: int
    psi: int
    phi: int
    series_id: object = None

    @property
    def horizon(self):
        return self.phi - self.psi


def sample_tasks(test_set, tasks_per_series=5, seed=0):
    """Draw distinct (psi, phi) pairs uniformly per series.

    A series of length n admits n(n-1)/2 pairs; when that is not more than
    ``tasks_per_series`` every pair is returned.
    """
    rng = np.random.default_rng(seed)
    tasks = []
    for i, s in enumerate(test_set):
        n = s.T
        if n < 2:
            raise RejectedInputError(f"series {s.series_id!r} (index {i}) has length {n} < 2")
        psi, phi = np.triu_indices(n, k=1)
        total = psi.size
        if total <= tasks_per_series:
            chosen = np.arange(total)
        else:
            chosen = np.sort(rng.choice(total, size=tasks_per_series, replace=False))
        tasks.extend(PredictionTask(i, int(psi[k]) + 1, int(phi[k]) + 1, s.series_id)
                     for k in chosen)
    return tasks


def all_tasks(test_set):
    return [PredictionTask(i, a + 1, b + 1, s.series_id)
            for i, s in enumerate(test_set) for a, b in zip(*np.triu_indices(s.T, k=1))]


def amae(predictions, truths):
    """Mean absolute error over every scalar component of every task."""
    if len(predictions) != len(truths):
        raise RejectedInputError("predictions and truths are not aligned")
    if len(predictions) == 0:
        raise RejectedInputError("amae of an empty task list")
    p = np.concatenate([np.ravel(np.asarray(x, dtype=float)) for x in predictions])
    t = np.concatenate([np.ravel(np.asarray(x, dtype=float)) for x in truths])
    if p.shape != t.shape:
        raise RejectedInputError("prediction and truth dimensions differ")
    return float(np.mean(np.abs(p - t)))


class _Predictor:
    """Point forecasts for every (series, psi, phi) of a fixed test set."""

    def __init__(self, params, test_set):
        self.tables = {}
        for idx, Y in group_by_length(test_set):
            table = forecast_table(params, Y)
            for row, i in enumerate(idx):
                self.tables[i] = table[row]

    def predict(self, task):
        return self.tables[task.series_index][task.psi - 1, task.horizon - 1]


def evaluate_tasks(params, test_set, tasks):
    """AMAE of ``params`` on the given tasks."""
    pred = _Predictor(params, test_set)
    preds = [pred.predict(t) for t in tasks]
    truths = [test_set[t.series_index].values[t.phi - 1] for t in tasks]
    return amae(preds, truths)


def _evaluate_many(params, test_set, task_lists):
    pred = _Predictor(params, test_set)
    out = []
    for tasks in task_lists:
        idx = np.array([[t.series_index, t.psi, t.phi] for t in tasks])
        P = np.stack([pred.tables[i][a - 1, b - a - 1] for i, a, b in idx])
        Y = np.stack([test_set[i].values[b - 1] for i, _, b in idx])
        out.append(float(np.mean(np.abs(P - Y))))
    return out


@dataclass
class CellResult:
    method: str
    n_states: int
    beta: float
    amae: list = field(default_factory=list)
    failed: str = None
    selected: bool = False
    iterations: int = 0
    converged: bool = False
    zero_fraction_A: float = float("nan")

    @property
    def ok(self):
        return self.failed is None

    @property
    def mean(self):
        return float(np.mean(self.amae)) if self.amae else float("nan")

    @property
    def std(self):
        if len(self.amae) < 2:
            return 0.0
        return float(np.std(self.amae, ddof=1))

    @property
    def sem(self):
        return self.std / math.sqrt(len(self.amae)) if self.amae else float("nan")

    @property
    def row_key(self):
        """Report row label: OLDS, SLDS(beta=...) or SLDS(selected)."""
        if self.method == OLDS:
            return OLDS
        return f"{SLDS}(selected)" if self.selected else f"{SLDS}(beta={self.beta:g})"


@dataclass
class BenchmarkResult:
    cells: list
    config: dict

    def summary(self):
        return [dict(method=c.method, row=c.row_key, n_states=c.n_states, beta=c.beta,
                     mean=c.mean, std=c.std, repeats=len(c.amae), failed=c.failed)
                for c in self.cells]

    def cell(self, method, n_states, beta=None, selected=None):
        for c in self.cells:
            if c.method != method or c.n_states != n_states:
                continue
            if beta is not None and c.beta != beta:
                continue
            if selected is not None and c.selected != selected:
                continue
            return c
        raise KeyError((method, n_states, beta))

    def best_slds(self, n_states):
        """The SLDS cell with the lowest mean AMAE at this state count."""
        cands = [c for c in self.cells
                 if c.method == SLDS and c.n_states == n_states and c.ok]
        if not cands:
            raise KeyError((SLDS, n_states))
        return min(cands, key=lambda c: c.mean)

    @property
    def state_sizes(self):
        return list(self.config.get("state_sizes", []))


def _fit(train_set, cfg):
    try:
        params, diag = em_fit(train_set, cfg)
        return params, diag, None
    except (SparseLDSError, np.linalg.LinAlgError) as exc:
        log.warning("fit failed (l=%d, beta=%g): %s", cfg.l, cfg.beta, exc)
        return None, None, f"{type(exc).__name__}: {exc}"


def _make_cell(method, l, beta, params, diag, err, test_set, task_lists, selected=False):
    cell = CellResult(method, l, float(beta), failed=err, selected=selected)
    if params is not None:
        cell.iterations = diag.iterations_run
        cell.converged = diag.converged
        cell.zero_fraction_A = diag.zero_fraction_A
        try:
            cell.amae = _evaluate_many(params, test_set, task_lists)
        except (SparseLDSError, np.linalg.LinAlgError) as exc:
            cell.failed = f"{type(exc).__name__}: {exc}"
    return cell


def split_validation(train_set, fraction, seed):
    """Seeded split of the training series into (fit part, validation part)."""
    n = len(train_set)
    n_val = max(1, int(round(fraction * n)))
    if n_val >= n:
        raise RejectedInputError("validation split leaves no training series")
    perm = np.random.default_rng(seed).permutation(n)
    val = set(perm[:n_val].tolist())
    return ([s for i, s in enumerate(train_set) if i not in val],
            [s for i, s in enumerate(train_set) if i in val])


def run_benchmark(train_set, test_set, state_sizes, betas, repeats=10, cfg=None,
                  seed=0, tasks_per_series=5, select_beta=False,
                  validation_fraction=0.2, progress=None):
    """Fit every (state count, beta) cell once and score it on resampled tasks.

    Each repeat draws a fresh task set from a seed derived from ``seed`` and
    the repeat index; the same task sets are shared by all cells. ``beta = 0``
    cells are labelled OLDS. With ``select_beta`` the positive betas are
    compared on a held-out part of the training set (scored on every task
    pair), and only the winner, refit on the full training set, is reported
    as the SLDS cell for that state count.
    """
    if not train_set or not test_set:
        raise RejectedInputError("benchmark needs non-empty train and test sets")
    if not state_sizes or not betas:
        raise RejectedInputError("benchmark needs non-empty state and beta grids")
    if repeats < 1:
        raise RejectedInputError("repeats must be >= 1")
    template = cfg if cfg is not None else FitConfig(l=1)
    task_lists = [sample_tasks(test_set, tasks_per_series, np.random.SeedSequence([seed, r]))
                  for r in range(repeats)]
    pos_betas = [float(b) for b in betas if b > 0]
    cells = []
    for l in state_sizes:
        if any(b == 0 for b in betas):
            params, diag, err = _fit(train_set, template.with_(l=int(l), beta=0.0))
            cells.append(_make_cell(OLDS, int(l), 0.0, params, diag, err, test_set, task_lists))
            _report(progress, cells[-1])
        if not pos_betas:
            continue
        if select_beta and len(pos_betas) > 1:
            fit_part, val_part = split_validation(train_set, validation_fraction, seed)
            val_tasks = all_tasks(val_part)
            scores = {}
            for b in pos_betas:
                params, _, err = _fit(fit_part, template.with_(l=int(l), beta=b))
                if params is not None:
                    try:
                        scores[b] = evaluate_tasks(params, val_part, val_tasks)
                    except (SparseLDSError, np.linalg.LinAlgError):
                        pass
            if not scores:
                cells.append(CellResult(SLDS, int(l), float("nan"), selected=True,
                                        failed="no beta could be fit on the validation split"))
                continue
            best = min(scores, key=lambda b: (scores[b], b))
            params, diag, err = _fit(train_set, template.with_(l=int(l), beta=best))
            cells.append(_make_cell(SLDS, int(l), best, params, diag, err, test_set,
                                    task_lists, selected=True))
            _report(progress, cells[-1])
        else:
            for b in pos_betas:
                params, diag, err = _fit(train_set, template.with_(l=int(l), beta=b))
                cells.append(_make_cell(SLDS, int(l), b, params, diag, err, test_set, task_lists))
                _report(progress, cells[-1])
    config = dict(train_size=len(train_set), test_size=len(test_set),
                  state_sizes=[int(l) for l in state_sizes], betas=[float(b) for b in betas],
                  repeats=int(repeats), tasks_per_series=int(tasks_per_series), seed=seed,
                  select_beta=bool(select_beta), validation_fraction=validation_fraction,
                  tasks_per_repeat=len(task_lists[0]), fit=asdict(template))
    return BenchmarkResult(cells, config)


def _report(progress, cell):
    if progress is not None:
        progress(cell)
