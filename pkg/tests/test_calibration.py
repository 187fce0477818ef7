"""Calibrators against independent oracles; weighting; sample assembly."""

import json

import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.special import expit, logit

from kgcalib import (
    IsotonicCalibrator,
    KnowledgeGraph,
    LabeledTriples,
    PlattCalibrator,
    Vocabulary,
    build_calibration_sample,
    build_filter_index,
    calibration_weights,
    load_calibrator,
    make_calibrator,
    save_calibrator,
)
from kgcalib.calibration import _smoothed_targets, _weighted_pava
from kgcalib.exceptions import ConfigError, FitError
from sklearn.exceptions import NotFittedError


class TestCalibrationWeights:
    def test_known_values(self):
        w = calibration_weights(0.25, 10)
        assert w.positive_weight == 10.0
        np.testing.assert_allclose(w.negative_weight, 3.0)

    def test_balanced_base_rate_gives_unit_negative_weight(self):
        w = calibration_weights(0.5, 7)
        assert w.negative_weight == 1.0
        assert w.positive_weight == 7.0

    def test_recovers_base_rate_identity(self):
        # reweighted positive mass / total mass must equal the base rate
        rng = np.random.default_rng(0)
        for _ in range(200):
            alpha = float(rng.uniform(0.01, 0.99))
            eta = int(rng.integers(1, 60))
            w = calibration_weights(alpha, eta)
            n_pos = 1000
            implied = w.positive_weight * n_pos / (w.negative_weight * eta * n_pos + w.positive_weight * n_pos)
            np.testing.assert_allclose(implied, alpha, rtol=1e-12)

    def test_invalid_inputs_rejected(self):
        with pytest.raises(ConfigError):
            calibration_weights(0.0, 5)
        with pytest.raises(ConfigError):
            calibration_weights(1.0, 5)
        with pytest.raises(ConfigError):
            calibration_weights(0.5, 0)


class TestSmoothedTargets:
    def test_matches_hand_computation(self):
        labels = np.array([True, True, False])
        weights = np.array([2.0, 2.0, 8.0])
        targets = _smoothed_targets(labels, weights)
        # positive target (W+ + 1)/(W+ + 2) with W+ = 4; negative 1/(W- + 2)
        np.testing.assert_allclose(targets[:2], 5.0 / 6.0)
        np.testing.assert_allclose(targets[2], 1.0 / 10.0)


def _platt_oracle(scores, labels, weights, tol=1e-12):
    """Independent fit of sigmoid(a*s+b) by scipy BFGS on the smoothed NLL."""
    targets = _smoothed_targets(labels, weights)

    def objective(ab):
        z = ab[0] * scores + ab[1]
        return float(np.sum(weights * (np.logaddexp(0.0, z) - targets * z)))

    best = None
    for start in ((0.0, 0.0), (1.0, 0.0), (-1.0, 0.0)):
        res = minimize(objective, start, method="BFGS", options={"gtol": tol, "maxiter": 500})
        if best is None or res.fun < best.fun:
            best = res
    return best.x


class TestPlattCalibrator:
    def test_recovers_known_sigmoid(self):
        rng = np.random.default_rng(1)
        scores = rng.uniform(-4, 4, 4000)
        probs = expit(1.7 * scores - 0.6)
        labels = rng.uniform(size=4000) < probs
        cal = PlattCalibrator().fit(scores, labels)
        assert cal.converged_
        assert abs(cal.slope_ - 1.7) < 0.15
        assert abs(cal.intercept_ + 0.6) < 0.15

    def test_matches_independent_optimizer(self):
        rng = np.random.default_rng(2)
        for trial in range(20):
            n = 150
            scores = rng.standard_normal(n) * 2.0
            labels = rng.uniform(size=n) < expit(0.8 * scores + 0.3)
            if labels.all() or not labels.any():
                continue
            weights = rng.uniform(0.5, 3.0, n)
            cal = PlattCalibrator().fit(scores, labels, sample_weight=weights)
            a, b = _platt_oracle(scores, labels, weights)
            np.testing.assert_allclose(cal.slope_, a, atol=2e-5)
            np.testing.assert_allclose(cal.intercept_, b, atol=2e-5)

    def test_higher_scores_give_higher_probabilities(self):
        rng = np.random.default_rng(3)
        scores = np.concatenate([rng.normal(-2, 1, 200), rng.normal(2, 1, 200)])
        labels = np.concatenate([np.zeros(200, bool), np.ones(200, bool)])
        cal = PlattCalibrator().fit(scores, labels)
        assert cal.slope_ > 0
        probs = cal.predict(np.array([-3.0, 0.0, 3.0]))
        assert probs[0] < probs[1] < probs[2]

    def test_weighting_shifts_the_fit(self):
        rng = np.random.default_rng(4)
        scores = rng.standard_normal(400)
        labels = scores + rng.standard_normal(400) * 0.5 > 0
        heavy_pos = PlattCalibrator().fit(
            scores, labels, sample_weight=np.where(labels, 20.0, 1.0)
        )
        heavy_neg = PlattCalibrator().fit(
            scores, labels, sample_weight=np.where(labels, 1.0, 20.0)
        )
        # up-weighting positives raises the predicted probability everywhere
        grid = np.linspace(-2, 2, 9)
        assert (heavy_pos.predict(grid) > heavy_neg.predict(grid)).all()

    def test_single_class_fits_via_smoothing(self):
        scores = np.array([-1.0, 0.0, 1.0])
        with pytest.warns(UserWarning, match="single class"):
            cal = PlattCalibrator().fit(scores, np.ones(3, dtype=bool))
        assert cal.degenerate_
        # smoothed target for W+ = 3 is 4/5 regardless of score
        np.testing.assert_allclose(cal.predict(scores), 0.8, atol=1e-6)

    def test_constant_scores_fall_back_to_intercept_only(self):
        scores = np.zeros(10)
        labels = np.array([True] * 7 + [False] * 3)
        with pytest.warns(UserWarning, match="constant"):
            cal = PlattCalibrator().fit(scores, labels)
        assert cal.degenerate_
        assert cal.slope_ == 0.0
        # intercept-only model must reproduce the smoothed weighted mean
        targets = _smoothed_targets(labels, np.ones(10))
        np.testing.assert_allclose(cal.predict(np.zeros(1))[0], targets.mean(), atol=1e-12)

    def test_predict_before_fit_raises(self):
        with pytest.raises(NotFittedError):
            PlattCalibrator().predict(np.zeros(2))

    def test_objective_history_is_monotone_nonincreasing(self):
        rng = np.random.default_rng(5)
        scores = rng.standard_normal(300)
        labels = rng.uniform(size=300) < expit(2.0 * scores)
        cal = PlattCalibrator().fit(scores, labels)
        hist = np.asarray(cal.objective_history_)
        assert (np.diff(hist) <= 1e-12).all()

    def test_mismatched_lengths_rejected(self):
        with pytest.raises(ValueError):
            PlattCalibrator().fit(np.zeros(3), np.ones(2, dtype=bool))


def _pava_oracle(values, weights):
    """O(n^2) reference: repeatedly merge adjacent decreasing blocks."""
    blocks = [[v * w, w, [i]] for i, (v, w) in enumerate(zip(values, weights))]
    changed = True
    while changed:
        changed = False
        for i in range(len(blocks) - 1):
            left_mean = blocks[i][0] / blocks[i][1]
            right_mean = blocks[i + 1][0] / blocks[i + 1][1]
            if left_mean > right_mean + 1e-15:
                blocks[i][0] += blocks[i + 1][0]
                blocks[i][1] += blocks[i + 1][1]
                blocks[i][2] += blocks[i + 1][2]
                del blocks[i + 1]
                changed = True
                break
    out = np.empty(len(values))
    for total, weight, idxs in blocks:
        out[idxs] = total / weight
    return out


class TestWeightedPava:
    def test_matches_merge_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(60):
            n = int(rng.integers(1, 25))
            values = rng.standard_normal(n)
            weights = rng.uniform(0.1, 5.0, n)
            got = _weighted_pava(values, weights)
            np.testing.assert_allclose(got, _pava_oracle(values, weights), atol=1e-10)

    def test_output_is_monotone_and_weighted_mean_preserving(self):
        rng = np.random.default_rng(7)
        for _ in range(40):
            n = int(rng.integers(2, 40))
            values = rng.standard_normal(n)
            weights = rng.uniform(0.1, 3.0, n)
            fitted = _weighted_pava(values, weights)
            assert (np.diff(fitted) >= -1e-12).all()
            np.testing.assert_allclose(
                np.sum(fitted * weights), np.sum(values * weights), rtol=1e-10
            )

    def test_already_monotone_input_is_unchanged(self):
        values = np.array([0.0, 0.25, 0.5, 1.0])
        np.testing.assert_array_equal(_weighted_pava(values, np.ones(4)), values)


class TestIsotonicCalibrator:
    def test_matches_sklearn_on_unweighted_data(self):
        sklearn_iso = pytest.importorskip("sklearn.isotonic")
        rng = np.random.default_rng(8)
        for _ in range(10):
            scores = rng.standard_normal(80)
            labels = rng.uniform(size=80) < expit(scores)
            cal = IsotonicCalibrator().fit(scores, labels)
            ref = sklearn_iso.IsotonicRegression(out_of_bounds="clip")
            ref.fit(scores, labels.astype(float))
            grid = np.sort(scores)  # evaluate exactly at training points
            np.testing.assert_allclose(cal.predict(grid), ref.predict(grid), atol=1e-10)

    def test_prediction_is_step_function_left_closed(self):
        scores = np.array([0.0, 1.0, 2.0, 3.0])
        labels = np.array([False, False, True, True])
        cal = IsotonicCalibrator().fit(scores, labels)
        # below the lowest breakpoint clamps to the first value
        assert cal.predict(np.array([-10.0]))[0] == cal.values_[0]
        # at a breakpoint the new value applies (left-closed interval)
        for bp, val in zip(cal.breakpoints_, cal.values_):
            assert cal.predict(np.array([bp]))[0] == val
        assert cal.predict(np.array([99.0]))[0] == cal.values_[-1]

    def test_exact_score_ties_are_pre_pooled(self):
        scores = np.array([1.0, 1.0, 1.0, 2.0])
        labels = np.array([True, False, False, True])
        weights = np.array([1.0, 1.0, 1.0, 1.0])
        cal = IsotonicCalibrator().fit(scores, labels, sample_weight=weights)
        # tied scores must receive the pooled value 1/3
        np.testing.assert_allclose(cal.predict(np.array([1.0]))[0], 1.0 / 3.0)
        assert cal.breakpoints_.size == 2

    def test_weights_change_the_fit(self):
        scores = np.array([0.0, 1.0])
        labels = np.array([True, False])
        light = IsotonicCalibrator().fit(scores, labels)
        heavy = IsotonicCalibrator().fit(
            scores, labels, sample_weight=np.array([3.0, 1.0])
        )
        np.testing.assert_allclose(light.predict(np.array([0.5]))[0], 0.5)
        np.testing.assert_allclose(heavy.predict(np.array([0.5]))[0], 0.75)

    def test_breakpoints_strictly_increasing_values_clipped(self):
        rng = np.random.default_rng(9)
        scores = np.round(rng.standard_normal(200), 1)  # force ties
        labels = rng.uniform(size=200) < expit(2 * scores)
        cal = IsotonicCalibrator().fit(scores, labels)
        assert (np.diff(cal.breakpoints_) > 0).all()
        assert (np.diff(cal.values_) >= 0).all()
        assert cal.values_.min() >= 0.0 and cal.values_.max() <= 1.0

    def test_single_class_is_degenerate_but_usable(self):
        with pytest.warns(UserWarning, match="single class"):
            cal = IsotonicCalibrator().fit(np.array([0.0, 1.0]), np.zeros(2, bool))
        assert cal.degenerate_
        np.testing.assert_array_equal(cal.predict(np.array([-1.0, 2.0])), 0.0)

    def test_empty_sample_rejected(self):
        with pytest.raises(FitError):
            IsotonicCalibrator().fit(np.zeros(0), np.zeros(0, dtype=bool))

    def test_predict_before_fit_raises(self):
        with pytest.raises(NotFittedError):
            IsotonicCalibrator().predict(np.zeros(1))


class TestMakeCalibrator:
    def test_dispatch(self):
        assert isinstance(make_calibrator("platt"), PlattCalibrator)
        assert isinstance(make_calibrator("isotonic"), IsotonicCalibrator)
        with pytest.raises(ConfigError):
            make_calibrator("beta")


class TestSaveLoadCalibrator:
    def test_platt_round_trip(self, tmp_path):
        rng = np.random.default_rng(10)
        scores = rng.standard_normal(100)
        labels = rng.uniform(size=100) < expit(scores)
        cal = PlattCalibrator().fit(scores, labels)
        path = tmp_path / "platt.json"
        save_calibrator(cal, path)
        payload = json.loads(path.read_text())
        assert payload["method"] == "platt"
        assert set(payload) >= {"a", "b"}
        loaded = load_calibrator(path)
        np.testing.assert_allclose(loaded.predict(scores), cal.predict(scores))

    def test_isotonic_round_trip(self, tmp_path):
        rng = np.random.default_rng(11)
        scores = rng.standard_normal(100)
        labels = rng.uniform(size=100) < expit(scores)
        cal = IsotonicCalibrator().fit(scores, labels)
        path = tmp_path / "iso.json"
        save_calibrator(cal, path)
        payload = json.loads(path.read_text())
        assert payload["method"] == "isotonic"
        assert len(payload["breakpoints"]) == len(payload["values"])
        loaded = load_calibrator(path)
        grid = np.linspace(-3, 3, 101)
        np.testing.assert_allclose(loaded.predict(grid), cal.predict(grid))

    def test_corrupt_isotonic_payload_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(
            json.dumps({"method": "isotonic", "breakpoints": [0.0, 1.0], "values": [0.9, 0.1]})
        )
        with pytest.raises(ConfigError):
            load_calibrator(path)

    def test_unknown_method_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"method": "spline"}))
        with pytest.raises(ConfigError):
            load_calibrator(path)


def _toy_model_predict(triples):
    """Deterministic stand-in scorer: high for object > subject."""
    triples = np.asarray(triples)
    return (triples[:, 2] - triples[:, 0]).astype(float)


class TestBuildCalibrationSample:
    def _labeled(self):
        entities = Vocabulary(f"e{i}" for i in range(10))
        relations = Vocabulary(["r"])
        triples = np.array([[0, 0, 5], [1, 0, 6], [7, 0, 2], [8, 0, 3]])
        labels = np.array([True, True, False, False])
        return LabeledTriples(triples, labels, entities, relations)

    def test_ground_truth_uses_labels_and_unit_weights(self):
        data = self._labeled()
        sample = build_calibration_sample(_toy_model_predict, data, strategy="ground-truth")
        np.testing.assert_array_equal(sample.labels, data.labels)
        assert sample.sample_weight is None  # unit weights, implicitly
        np.testing.assert_allclose(
            sample.scores, _toy_model_predict(data.triples)
        )
        assert sample.meta["strategy"] == "ground-truth"
        assert sample.meta["n_positives"] == 2 and sample.meta["n_negatives"] == 2

    def test_ground_truth_requires_labeled_data(self):
        entities = Vocabulary(["a", "b"])
        relations = Vocabulary(["r"])
        graph = KnowledgeGraph(np.array([[0, 0, 1]]), entities, relations)
        with pytest.raises(ConfigError):
            build_calibration_sample(_toy_model_predict, graph, strategy="ground-truth")

    def test_synthetic_builds_weighted_corruptions(self):
        data = self._labeled()
        sample = build_calibration_sample(
            _toy_model_predict,
            data,
            strategy="synthetic",
            base_rate=0.25,
            negatives_per_positive=10,
            seed=3,
            n_entities=10,
        )
        # positives = the 2 labeled positives; negatives = 2 * 10 corruptions
        assert sample.labels.sum() == 2
        assert (~sample.labels).sum() == 20
        np.testing.assert_array_equal(sample.sample_weight[sample.labels], 10.0)
        np.testing.assert_allclose(sample.sample_weight[~sample.labels], 3.0)
        assert sample.meta["n_negatives"] == 20
        assert sample.meta["base_rate"] == 0.25

    def test_synthetic_same_seed_reproduces(self):
        data = self._labeled()
        kwargs = dict(
            strategy="synthetic", base_rate=0.5, negatives_per_positive=5, seed=11, n_entities=10
        )
        a = build_calibration_sample(_toy_model_predict, data, **kwargs)
        b = build_calibration_sample(_toy_model_predict, data, **kwargs)
        np.testing.assert_array_equal(a.scores, b.scores)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_synthetic_filter_drops_known_positives(self):
        data = self._labeled()
        # treat every triple with object id < 5 as a known positive, so a
        # subset of the corruptions must be dropped and counted
        index = build_filter_index(
            np.array([[s, 0, o] for s in range(10) for o in range(5)])
        )
        sample = build_calibration_sample(
            _toy_model_predict,
            data,
            strategy="synthetic",
            base_rate=0.5,
            negatives_per_positive=20,
            seed=2,
            n_entities=10,
            filter_index=index,
        )
        assert sample.meta["filtered"] is True
        assert sample.meta["n_filtered_out"] > 0
        assert sample.meta["n_filtered_out"] + sample.meta["n_negatives"] == 40
        # no surviving negative may be a known positive
        unfiltered = build_calibration_sample(
            _toy_model_predict,
            data,
            strategy="synthetic",
            base_rate=0.5,
            negatives_per_positive=20,
            seed=2,
            n_entities=10,
        )
        assert unfiltered.meta["n_negatives"] == 40
        assert unfiltered.meta["filtered"] is False

    def test_unknown_strategy_rejected(self):
        with pytest.raises(ConfigError):
            build_calibration_sample(_toy_model_predict, self._labeled(), strategy="mixup")
