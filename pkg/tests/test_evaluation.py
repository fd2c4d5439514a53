import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparselds import evaluation
from sparselds.core import ObservationSequence, random_sparse_model, simulate_dataset
from sparselds.evaluation import (OLDS, SLDS, all_tasks, amae, evaluate_tasks, run_benchmark,
                                  sample_tasks, split_validation)
from sparselds.exceptions import NumericalFailureError, RejectedInputError
from sparselds.forecasting import forecast
from sparselds.learning import FitConfig, em_fit


def series(lengths, d=1):
    return [ObservationSequence(np.zeros((n, d)), series_id=f"s{i}") for i, n in enumerate(lengths)]


class TestSampleTasks:
    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(2, 12), min_size=1, max_size=8), st.integers(1, 10),
           st.integers(0, 2**31))
    def test_invariants(self, lengths, k, seed):
        data = series(lengths)
        tasks = sample_tasks(data, k, seed)
        for i, n in enumerate(lengths):
            mine = [(t.psi, t.phi) for t in tasks if t.series_index == i]
            assert len(set(mine)) == len(mine) == min(k, n * (n - 1) // 2)
            assert all(1 <= a < b <= n for a, b in mine)
            assert all(t.series_id == f"s{i}" for t in tasks if t.series_index == i)

    def test_length_two(self):
        tasks = sample_tasks(series([2]), 5, seed=0)
        assert [(t.psi, t.phi) for t in tasks] == [(1, 2)]

    def test_protocol_count(self):
        assert len(sample_tasks(series([30] * 500), 5, seed=1)) == 2500

    def test_seeded(self):
        data = series([30] * 20)
        a = sample_tasks(data, 5, seed=3)
        assert a == sample_tasks(data, 5, seed=3)
        assert a != sample_tasks(data, 5, seed=4)

    def test_short_series_named(self):
        with pytest.raises(RejectedInputError, match="s1"):
            sample_tasks(series([3, 1]), 5, seed=0)

    def test_all_tasks(self):
        assert len(all_tasks(series([4, 3]))) == 6 + 3


class TestAmae:
    def test_example(self):
        assert amae([1, 3], [1, 2]) == 0.5

    def test_identity_and_permutation(self, rng):
        p = rng.standard_normal((10, 3))
        t = rng.standard_normal((10, 3))
        assert amae(list(p), list(p)) == 0.0
        perm = rng.permutation(10)
        assert amae(list(p[perm]), list(t[perm])) == pytest.approx(amae(list(p), list(t)),
                                                                  abs=1e-15)

    def test_vector_components_pooled(self):
        assert amae([[0.0, 0.0]], [[1.0, 3.0]]) == 2.0

    def test_errors(self):
        with pytest.raises(RejectedInputError):
            amae([], [])
        with pytest.raises(RejectedInputError):
            amae([1.0], [1.0, 2.0])


@pytest.fixture(scope="module")
def small_data():
    p = random_sparse_model(2, 2, 0.5, seed=3, state_noise=0.2, obs_noise=0.2)
    return (simulate_dataset(p, 15, 10, seed=1), simulate_dataset(p, 12, 10, seed=2))


FAST = FitConfig(l=1, em_max_iter=15, prox_max_iter=50)


class TestRunBenchmark:
    def test_olds_only(self, small_data):
        train, test = small_data
        res = run_benchmark(train, test, [1, 2], [0], repeats=3, cfg=FAST)
        assert [c.row_key for c in res.cells] == [OLDS, OLDS]
        for c in res.cells:
            assert len(c.amae) == 3
            assert c.mean == pytest.approx(np.mean(c.amae), abs=1e-12)
            assert all(v >= 0 for v in c.amae)

    def test_beta_zero_equals_reference_run(self, small_data):
        train, test = small_data
        res = run_benchmark(train, test, [2], [0, 1.0], repeats=2, cfg=FAST, seed=5)
        params, _ = em_fit(train, FAST.with_(l=2))
        for r in range(2):
            tasks = sample_tasks(test, 5, np.random.SeedSequence([5, r]))
            preds = [forecast(params, test[t.series_index].prefix(t.psi), t.horizon)
                     .horizon_values[-1] for t in tasks]
            truths = [test[t.series_index].values[t.phi - 1] for t in tasks]
            assert res.cell(OLDS, 2).amae[r] == pytest.approx(amae(preds, truths), abs=1e-9)
            assert evaluate_tasks(params, test, tasks) == pytest.approx(amae(preds, truths),
                                                                        abs=1e-12)

    def test_cells_and_summary(self, small_data):
        train, test = small_data
        res = run_benchmark(train, test, [1, 2], [0, 1.0, 10.0], repeats=2, cfg=FAST)
        assert len(res.cells) == 6
        assert res.best_slds(2).method == SLDS
        rows = res.summary()
        assert {r["row"] for r in rows} == {OLDS, "SLDS(beta=1)", "SLDS(beta=10)"}
        assert res.config["tasks_per_repeat"] == 5 * len(test)
        assert res.state_sizes == [1, 2]

    def test_failed_cell_does_not_abort(self, small_data, monkeypatch):
        train, test = small_data
        real = evaluation.em_fit

        def flaky(data, cfg):
            if cfg.l == 2:
                raise NumericalFailureError("boom", iteration=3)
            return real(data, cfg)

        monkeypatch.setattr(evaluation, "em_fit", flaky)
        res = run_benchmark(train, test, [1, 2], [0], repeats=2, cfg=FAST)
        assert res.cell(OLDS, 1).ok
        bad = res.cell(OLDS, 2)
        assert not bad.ok and "boom" in bad.failed and bad.amae == []

    def test_beta_selection(self, small_data):
        train, test = small_data
        res = run_benchmark(train, test, [2], [0, 0.5, 50.0], repeats=2, cfg=FAST,
                            select_beta=True)
        sel = [c for c in res.cells if c.method == SLDS]
        assert len(sel) == 1 and sel[0].selected and sel[0].beta in (0.5, 50.0)
        assert sel[0].row_key == "SLDS(selected)"

    def test_split_validation(self, small_data):
        train, _ = small_data
        fit, val = split_validation(train, 0.2, seed=0)
        assert len(val) == 3 and len(fit) == 12
        assert {id(s) for s in fit}.isdisjoint({id(s) for s in val})

    def test_rejects_empty(self, small_data):
        train, test = small_data
        with pytest.raises(RejectedInputError):
            run_benchmark([], test, [1], [0])
        with pytest.raises(RejectedInputError):
            run_benchmark(train, test, [], [0])
