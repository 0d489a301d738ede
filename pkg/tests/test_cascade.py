import json
import math
from fractions import Fraction

import numpy as np
import pytest

from cascadeboost.boosters import BoosterConfig, StrongClassifier
from cascadeboost.cascade import (ArrayNegativePool, CascadeConfig, CascadeExit, CascadeModel,
                                  ImageNegativePool, NodeTargets, SyntheticNegativePool,
                                  compose_rates, dumps_cascade, evaluate_cascade_roc,
                                  evaluate_node, gaussian_blob, geometric_schedule, load_cascade,
                                  save_cascade, train_cascade, uniform_box)
from cascadeboost.data import Dataset
from cascadeboost.weak import DecisionStump, WeakLearnerPool, enumerate_haar_features, predict_all


def hand_cascade():
    stumps = [DecisionStump(0, 0.0, 1), DecisionStump(1, 0.0, 1), DecisionStump(0, 1.0, 1)]
    exits = [CascadeExit(1, np.array([1.0]), 0.0),
             CascadeExit(3, np.array([0.2, 0.5, 0.3]), 0.1)]
    return CascadeModel(stumps, exits)


def brute_force_accepts(model, X, final_offset=None):
    """Evaluate every exit on every row, no early exit."""
    H = predict_all(model.classifiers, X)
    ok = np.ones(len(X), bool)
    for t, e in enumerate(model.exits):
        b = e.b if (final_offset is None or t < len(model.exits) - 1) else final_offset
        ok &= H[:, e.start : e.n] @ e.w >= b
    return ok


def gaussian_setup(seed, d=8, n_pos=150, shift=0.8):
    rng = np.random.default_rng(seed)
    pos = rng.normal(shift, 1, (n_pos, d))
    pool = SyntheticNegativePool(gaussian_blob(np.zeros(d), 1.0), seed=seed + 1)
    return pos, pool, WeakLearnerPool(d, 1.0, seed)


class TestNodeTargets:
    @pytest.mark.parametrize("kw", [{"f_max": 1.0}, {"f_max": 0.0}, {"d_min": 0.0},
                                    {"d_min": 1.1}, {"F_fp": 1.0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            NodeTargets(**kw)


class TestComposeRates:
    def test_twenty_nodes(self):
        D, F = compose_rates([0.997] * 20, [0.5] * 20)
        assert D == pytest.approx(float(Fraction(997, 1000) ** 20), rel=1e-14)
        assert F == pytest.approx(2.0**-20, rel=1e-14)
        assert 0.941 <= D <= 0.942
        assert 9.5e-7 <= F <= 9.6e-7

    def test_single_node(self):
        assert compose_rates([0.93], [0.41]) == (0.93, 0.41)

    def test_unit_factor(self):
        assert compose_rates([1.0, 0.9], [1.0, 0.5]) == pytest.approx((0.9, 0.5))

    @pytest.mark.parametrize("d,f", [([], []), ([0.5], [0.0]), ([1.2], [0.5]), ([0.5, 0.5], [0.5])])
    def test_invalid(self, d, f):
        with pytest.raises(ValueError):
            compose_rates(d, f)

    def test_matches_simulation_with_independent_nodes(self):
        rng = np.random.default_rng(0)
        d = np.array([0.99, 0.97, 0.95, 0.98])
        f = np.array([0.5, 0.6, 0.4, 0.7])
        n = 200_000
        pos_pass = np.all(rng.random((n, 4)) < d, axis=1).mean()
        neg_pass = np.all(rng.random((n, 4)) < f, axis=1).mean()
        D, F = compose_rates(d, f)
        assert abs(pos_pass - D) / D < 0.02
        assert abs(neg_pass - F) / F < 0.02


class TestSchedule:
    def test_geometric(self):
        assert geometric_schedule(9) == [4, 4, 4, 8, 8, 16, 16, 32, 32]
        assert geometric_schedule(2) == [4, 4]


class TestCascadeModel:
    def test_trace_matches_brute_force(self):
        model = hand_cascade()
        X = np.random.default_rng(1).normal(size=(200, 2))
        np.testing.assert_array_equal(model.accepts(X), brute_force_accepts(model, X))

    def test_rejected_examples_never_reevaluated(self):
        model = hand_cascade()
        X = np.random.default_rng(2).normal(size=(300, 2))
        tr = model.trace(X)
        rejected_first = np.flatnonzero(tr.rejected_at == 0)
        assert rejected_first.size > 0
        assert not np.intersect1d(rejected_first, tr.evaluated[1]).size
        np.testing.assert_array_equal(tr.evaluated[0], np.arange(300))

    def test_standard_cascade_exit(self):
        stumps = [DecisionStump(0, 0.0, 1), DecisionStump(1, 0.0, 1)]
        model = CascadeModel(stumps, [CascadeExit(1, [1.0], 0.0), CascadeExit(2, [1.0], 0.0, start=1)])
        assert not model.multi_exit
        X = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0]])
        assert model.accepts(X).tolist() == [True, False, False]

    def test_exit_validation(self):
        with pytest.raises(ValueError):
            CascadeModel([DecisionStump(0, 0.0)], [CascadeExit(2, [0.5, 0.5], 0.0)])
        with pytest.raises(ValueError):
            CascadeExit(2, [1.0], 0.0)

    def test_json_round_trip(self, tmp_path):
        model = hand_cascade()
        path = tmp_path / "c.json"
        save_cascade(model, path)
        back = load_cascade(path)
        assert dumps_cascade(back) == path.read_text()
        d = json.loads(path.read_text())
        assert set(d) >= {"exits", "classifiers", "lac_start_node", "targets"}
        assert d["exits"][1]["n_t"] == 3


class TestEvaluateNode:
    def test_perfect_separation(self):
        ds = Dataset.from_classes([[2.0], [3.0]], [[-1.0], [-2.0]])
        exit_ = StrongClassifier([DecisionStump(0, 0.0, 1)], [1.0], 0.0)
        assert evaluate_node(exit_, ds) == (1.0, 0.0)

    def test_offset_above_everything(self):
        ds = Dataset.from_classes([[2.0], [3.0]], [[-1.0], [-2.0]])
        exit_ = StrongClassifier([DecisionStump(0, 0.0, 1)], [1.0], 5.0)
        assert evaluate_node(exit_, ds) == (0.0, 0.0)

    def test_hand_count(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(10, 2))
        ds = Dataset.from_classes(X[:4], X[4:])
        exit_ = StrongClassifier([DecisionStump(0, 0.1, 1), DecisionStump(1, -0.2, -1)], [0.6, 0.4], 0.1)
        scores = exit_.decision_function(ds.features)
        tp = sum(1 for i in range(4) if scores[i] >= 0.1)
        fp = sum(1 for i in range(4, 10) if scores[i] >= 0.1)
        assert evaluate_node(exit_, ds) == (tp / 4, fp / 6)

    def test_single_class(self):
        ds = Dataset.from_classes([[1.0]], np.zeros((0, 1)))
        with pytest.raises(ValueError):
            evaluate_node(StrongClassifier([DecisionStump(0, 0.0)], [1.0]), ds)


class TestROC:
    def setup_method(self):
        rng = np.random.default_rng(4)
        self.model = hand_cascade()
        self.data = Dataset.from_classes(rng.normal(0.7, 1, (60, 2)), rng.normal(0, 1, (140, 2)))

    def test_own_offset_matches_full_evaluation(self):
        acc = self.model.accepts(self.data.features)
        points = evaluate_cascade_roc(self.model, self.data, [self.model.exits[-1].b])
        assert points == [(int(acc[60:].sum()), float(acc[:60].mean()))]

    def test_open_final_exit(self):
        points = evaluate_cascade_roc(self.model, self.data, [-np.inf])
        first = StrongClassifier(self.model.classifiers[:1], [1.0], 0.0)
        det, _ = evaluate_node(first, self.data)
        assert points[0][1] == pytest.approx(det)

    def test_three_point_sweep_matches_simulation(self):
        offsets = [-0.3, 0.1, 0.6]
        points = evaluate_cascade_roc(self.model, self.data, offsets)
        expected = []
        for b in offsets:
            acc = brute_force_accepts(self.model, self.data.features, final_offset=b)
            expected.append((int(acc[60:].sum()), float(acc[:60].sum() / 60)))
        assert points == sorted(expected)

    def test_step_function(self):
        points = evaluate_cascade_roc(self.model, self.data)
        fps = [p[0] for p in points]
        dets = [p[1] for p in points]
        assert fps == sorted(fps)
        assert all(a <= b for a, b in zip(dets, dets[1:]))


class TestNegativePools:
    def test_array_pool_without_replacement(self):
        neg = np.arange(20, dtype=float)[:, None]
        pool = ArrayNegativePool(neg, seed=5)
        a = pool.sample(None, 12)
        b = pool.sample(None, 12)
        assert len(a) == 12 and len(b) == 8
        assert pool.exhausted
        assert sorted(np.concatenate([a, b])[:, 0].tolist()) == list(range(20))

    def test_sampled_negatives_pass_model(self):
        model = hand_cascade()
        pool = SyntheticNegativePool(gaussian_blob([0.0, 0.0], 1.0), seed=6)
        batch = pool.sample(model, 50)
        assert len(batch) == 50
        assert np.all(brute_force_accepts(model, batch))

    def test_synthetic_pool_budget(self):
        model = CascadeModel([DecisionStump(0, 100.0)], [CascadeExit(1, [1.0], 0.0)])
        pool = SyntheticNegativePool(uniform_box(0, 1, 1), seed=7, max_draws=500)
        assert len(pool.sample(model, 10)) == 0
        assert pool.exhausted and pool.consumed == 500

    def test_image_pool(self):
        rng = np.random.default_rng(8)
        images = [rng.integers(0, 256, size=(30, 40)), rng.integers(0, 256, size=(5, 5))]
        feats = enumerate_haar_features(8, 8, step=4)
        pool = ImageNegativePool(images, (8, 8), feats, seed=9)
        batch = pool.sample(None, 7)
        assert batch.shape == (7, len(feats))

    def test_image_pool_needs_large_image(self):
        with pytest.raises(ValueError):
            ImageNegativePool([np.zeros((4, 4))], (8, 8), [])


class TestTrainCascade:
    def test_trivially_separable(self):
        rng = np.random.default_rng(10)
        pos = rng.uniform(0, 1, (40, 2))
        pos[:, 0] += 0.25
        pool = SyntheticNegativePool(lambda r, k: np.column_stack([r.uniform(-1.25, -0.25, k),
                                                                   r.uniform(0, 1, k)]), seed=11)
        model = train_cascade(pos, pool, BoosterConfig(), NodeTargets(0.99, 0.5, 1e-6),
                              WeakLearnerPool(2, 1.0), CascadeConfig(n_negatives=60))
        assert model.n_nodes == 1
        assert len(model.classifiers) == 1
        assert model.meta["F"] <= 1e-6
        assert not model.flags

    def test_two_node_pool_invariant(self):
        pos, pool, weak = gaussian_setup(12)
        model = train_cascade(pos, pool, BoosterConfig(), NodeTargets(0.98, 0.5, 0.01), weak,
                              CascadeConfig(n_negatives=200, max_nodes=2))
        assert model.n_nodes == 2
        for n_exits, batch in pool.batches:
            if n_exits:
                sub = CascadeModel(model.classifiers, model.exits[:n_exits])
                assert np.all(brute_force_accepts(sub, batch))

    def test_node_targets_met(self):
        pos, pool, weak = gaussian_setup(13, shift=1.5)
        targets = NodeTargets(0.98, 0.5, 0.01)
        model = train_cascade(pos, pool, BoosterConfig(), targets, weak,
                              CascadeConfig(n_negatives=200, max_nodes=3))
        assert not model.flags
        for m in model.node_metrics:
            assert m["detection_rate"] >= targets.d_min
            assert m["fp_rate"] <= targets.f_max + 1 / m["n_negatives"]
        sizes = [e.n for e in model.exits]
        assert sizes == sorted(sizes)
        D, F = compose_rates([m["detection_rate"] for m in model.node_metrics],
                             [m["fp_rate"] for m in model.node_metrics])
        assert (D, F) == pytest.approx((model.meta["D"], model.meta["F"]))

    def test_lac_start_node(self):
        pos, pool, weak = gaussian_setup(14, shift=1.5)
        model = train_cascade(pos, pool, BoosterConfig(mode="lacboost"), NodeTargets(0.98, 0.5, 1e-3),
                              weak, CascadeConfig(n_negatives=150, max_nodes=3, lac_start_node=2))
        assert [m["mode"] for m in model.node_metrics] == ["fisherboost", "lacboost", "lacboost"]

    def test_pool_exhausted(self):
        rng = np.random.default_rng(15)
        pos = rng.normal(1, 1, (50, 3))
        pool = ArrayNegativePool(rng.normal(0, 1, (120, 3)), seed=16)
        model = train_cascade(pos, pool, BoosterConfig(), NodeTargets(0.98, 0.5, 1e-6),
                              WeakLearnerPool(3, 1.0), CascadeConfig(n_negatives=100))
        assert "pool_exhausted" in model.flags
        assert model.n_nodes >= 1

    def test_budget_flag_marks_short_node(self):
        pos, pool, weak = gaussian_setup(13)
        model = train_cascade(pos, pool, BoosterConfig(), NodeTargets(0.98, 0.5, 0.01), weak,
                              CascadeConfig(n_negatives=200, max_nodes=3))
        missed = [m for m in model.node_metrics if not m["meets_d_min"]]
        assert ("node_budget_exceeded" in model.flags) == bool(missed)
        assert all(m["detection_rate"] < 0.98 for m in missed)

    def test_node_budget(self):
        rng = np.random.default_rng(17)
        pos = rng.normal(0, 1, (50, 3))
        pool = SyntheticNegativePool(gaussian_blob(np.zeros(3), 1.0), seed=18)
        model = train_cascade(pos, pool, BoosterConfig(), NodeTargets(1.0, 0.01, 1e-6),
                              WeakLearnerPool(3, 1.0), CascadeConfig(n_negatives=100, max_per_node=3))
        assert "node_budget_exceeded" in model.flags
        assert model.n_nodes == 1

    def test_strict_schedule(self):
        pos, pool, weak = gaussian_setup(19)
        model = train_cascade(pos, pool, BoosterConfig(), NodeTargets(0.99, 0.5, 1e-4), weak,
                              CascadeConfig(n_negatives=100, max_nodes=3, schedule=[2, 3, 5],
                                            strict_schedule=True))
        assert [e.n for e in model.exits] == [2, 5, 10]

    def test_standard_cascade(self):
        pos, pool, weak = gaussian_setup(20)
        model = train_cascade(pos, pool, BoosterConfig(), NodeTargets(0.98, 0.5, 1e-3), weak,
                              CascadeConfig(n_negatives=100, max_nodes=2, multi_exit=False))
        assert model.exits[1].start == model.exits[0].n
        assert not model.multi_exit

    def test_needs_two_positives(self):
        with pytest.raises(ValueError):
            train_cascade(np.zeros((1, 2)), ArrayNegativePool(np.zeros((5, 2))), BoosterConfig(),
                          NodeTargets(), WeakLearnerPool(2, 1.0))
