import csv
import io

import numpy as np
import pytest

from mstgd import experiments as ex
from mstgd.data import LabeledDataset, StratifiedPopulation, make_rng
from mstgd.models import MLPModel, stratified_least_squares
from mstgd.optimizers import OptimizerConfig, RunTrace


def spec(**kw):
    base = dict(kind="estimate", data="dec_udata", reps=3, seed=1)
    return ex.ExperimentSpec(**{**base, **kw})


class TestEstimatorAccuracy:
    def test_kinds(self):
        assert ex.normalize_kind("DEC_UDATA") == "dec_udata" and len(ex.DATA_KINDS) == 7
        with pytest.raises(ValueError):
            ex.normalize_kind("nope")

    def test_zero_variance_population(self):
        pop = StratifiedPopulation(np.full((10, 40), 3.0), np.repeat(np.arange(4), 10))
        res = ex.estimator_accuracy(spec(), population=pop)
        for m in ex.METHODS:
            assert np.all(res.sq_dev[m] == 0)
        assert res.rank1_fraction == 1.0

    def test_census_strata(self):
        # one row per category: the stratified draw is the whole population
        values = make_rng(0, "census").standard_normal((6, 4))
        pop = StratifiedPopulation(values, np.arange(4))
        res = ex.estimator_accuracy(spec(), population=pop)
        assert np.allclose(res.sq_dev["st"], 0, atol=1e-28)
        assert np.allclose(res.sq_dev["batch"], 0, atol=1e-28)

    @pytest.mark.parametrize("mode", ["general", "equal-mean"])
    def test_rows_and_summary(self, mode):
        res = ex.estimator_accuracy(spec(reps=2), coeff_mode=mode)
        assert len(res.rows) == 2 * 10 * 4
        assert set(res.rows[0]) == set(ex.ROUND_COLUMNS)
        summary = {s["method"]: s for s in res.summary()}
        assert summary["mst"]["rank1_fraction"] == res.rank1_fraction
        assert summary["sgd"]["rank1_fraction"] is None

    def test_reproducible(self):
        a = ex.estimator_accuracy(spec(data="random_ndata"))
        b = ex.estimator_accuracy(spec(data="random_ndata"))
        assert a.rows == b.rows

    def test_memory_estimator_beats_memoryless_on_average(self):
        res = ex.estimator_accuracy(spec(data="vard_ndata", reps=40))
        assert res.sq_dev["mst"].mean() < res.sq_dev["st"].mean()


class TestGradientTracking:
    def test_constant_matrix(self):
        matrix = np.tile(np.repeat([1.0, 2.0, 3.0, 4.0], 5)[:, None], (1, 6))
        res = ex.gradient_tracking(matrix, np.repeat(np.arange(4), 5), spec())
        assert np.all(res.sq_dev["mst"] == 0) and np.all(res.sq_dev["st"] == 0)

    def test_single_category(self):
        matrix = make_rng(1, "m").standard_normal((12, 5))
        res = ex.gradient_tracking(matrix, np.zeros(12, dtype=int), spec())
        assert res.sq_dev["mst"].shape == (3, 5)

    def test_label_checks(self):
        with pytest.raises(ValueError):
            ex.gradient_tracking(np.zeros((4, 3)), None, spec())
        with pytest.raises(ValueError):
            ex.gradient_tracking(np.zeros((4, 3)), np.zeros(3, dtype=int), spec())

    def test_collect_matrix(self):
        rng = make_rng(2, "mlp")
        X = rng.standard_normal((16, 3))
        y = np.repeat(np.arange(4), 4)
        m = MLPModel([3, 5, 4], X, y)
        cfg = OptimizerConfig(max_iter=3, step_size=0.1)
        M = ex.collect_gradient_matrix(m, LabeledDataset(X, y), cfg)
        assert M.shape == (16, 3)
        W0 = m.initial_point(make_rng(cfg.seed, "init"))
        assert np.allclose(M[:, 0], m.per_sample_grad(W0, None)[:, m.param_index(-1, 0, 0)])
        empty = ex.collect_gradient_matrix(m, LabeledDataset(X, y), OptimizerConfig(max_iter=0))
        assert empty.shape == (16, 0)


def blobs(seed=0, n=80, sep=4.0):
    rng = make_rng(seed, "blobs")
    y = np.repeat(np.arange(4), n // 4)
    X = sep * np.eye(4)[y] + 0.3 * rng.standard_normal((n, 4))
    return LabeledDataset(X, y)


class TestTraining:
    def test_zero_iterations_chance_accuracy(self):
        ds = blobs()
        m = MLPModel([4, 8, 4], ds.features, ds.labels)
        s = ex.ExperimentSpec("train", optimizers=("mstgd", "batch"),
                              config=dict(max_iter=0, batch_size=8), reps=3)
        res = ex.training_comparison(m, ds, s, test_set=ds)
        acc = np.concatenate([res.final(o) for o in s.optimizers])
        assert np.all(acc <= 0.75)
        assert all(len(t.rows) == 1 for ts in res.traces.values() for t in ts)

    def test_separable_toy(self):
        ds = blobs()
        m = MLPModel([4, 8, 4], ds.features, ds.labels)
        s = ex.ExperimentSpec("train", optimizers=("mstgd", "batch", "sgd"),
                              config=dict(max_iter=300, batch_size=8, step_size=0.5), reps=2)
        res = ex.training_comparison(m, ds, s, test_set=ds, checkpoint=100)
        for o in s.optimizers:
            assert np.all(res.final(o) >= 0.95)
        # SGD gets batch-size times the iterations
        assert res.traces["sgd"][0].rows[-1]["iteration"] == 300 * 8
        assert [r["optimizer"] for r in res.table()] == ["mstgd", "batch", "sgd"]

    def test_gaps_at_budgets(self):
        t = RunTrace("x", {}, [{"grad_evals": e, "gap": g} for e, g in [(0, 4.0), (10, 2.0), (20, 1.0)]])
        assert ex.gaps_at_budgets(t, [0, 15, 20, 30]).tolist() == [4.0, 2.0, 1.0, np.inf]
        t.diverged = True
        assert ex.gaps_at_budgets(t, [20])[0] == np.inf

    def test_convergence_comparison_small(self):
        model, traces = ex.convergence_comparison(seeds=1, budget=600, step_size=0.5,
                                                  optimizers=("mstgd", "batch"))
        assert model.n_samples == 400
        for opt, ts in traces.items():
            assert ts[0].rows[-1]["grad_evals"] >= 600
            assert ts[0].rows[-1]["gap"] < ts[0].rows[0]["gap"]


class TestCsv:
    def test_round_trip(self, tmp_path):
        rows = [{"a": 0.1, "b": None, "c": True}, {"a": 1 / 3, "b": "x", "c": 2}]
        path = ex.emit_csv(rows, tmp_path / "t.csv")
        back = list(csv.DictReader(open(path)))
        assert float(back[1]["a"]) == 1 / 3 and back[0]["b"] == "" and back[0]["c"] == "1"

    def test_empty_trace_header(self, tmp_path):
        ex.emit_csv(RunTrace("sgd", {}), tmp_path / "e.csv")
        assert (tmp_path / "e.csv").read_text().strip().split(",") == list(ex.TRACE_COLUMNS)
        with pytest.raises(ValueError):
            ex.emit_csv([], tmp_path / "f.csv")

    def test_atomic_write_leaves_no_temp(self, tmp_path):
        ex.atomic_write(tmp_path / "a.txt", "hi")
        assert [p.name for p in tmp_path.iterdir()] == ["a.txt"]

    def test_training_rows(self):
        model, ds = stratified_least_squares()
        s = ex.ExperimentSpec("train", optimizers=("batch",), config=dict(max_iter=2), reps=2)
        res = ex.training_comparison(model, ds, s, checkpoint=1)
        text = ex.render_csv(ex.trace_rows(res), ex.TRAINING_COLUMNS)
        parsed = list(csv.DictReader(io.StringIO(text)))
        assert len(parsed) == 6 and {r["seed"] for r in parsed} == {"0", "1"}


def test_spec_validation():
    with pytest.raises(ValueError):
        ex.ExperimentSpec("estimate", reps=0)
    assert ex.ExperimentSpec("x", optimizers=["a"]).to_dict()["optimizers"] == ["a"]
