"""Turning raw plausibility scores into calibrated probabilities.

Two calibrators are provided: logistic (Platt) scaling fitted by damped
Newton on a weighted, label-smoothed log-likelihood, and isotonic regression
fitted by weighted pool-adjacent-violators. Both follow the scikit-learn
estimator convention and can be serialized to a small JSON document.

When no ground-truth negatives exist, a calibration sample can be built
synthetically by corrupting positives. The class weights
``positive_weight = negatives_per_positive`` and
``negative_weight = 1 / base_rate - 1`` make the weighted sample match an
assumed positive base rate: with N = eta * P negatives, the weighted positive
fraction is exactly ``eta * P / ((1/alpha - 1) * N + eta * P) = alpha``.
"""

from __future__ import annotations

import json
import warnings
from typing import NamedTuple

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .exceptions import ConfigError, ConvergenceError, FitError
from .graph import KnowledgeGraph, LabeledTriples, triples_content_hash
from .sampling import sample_corruptions
from .validation import (
    as_float_array,
    as_label_array,
    as_weight_array,
    check_same_length,
    open_unit_interval,
    positive_int,
)

CALIBRATION_METHODS = ("platt", "isotonic")
CALIBRATION_STRATEGIES = ("ground-truth", "synthetic")


class CalibrationWeights(NamedTuple):
    """Per-class sample weights that impose a positive base rate."""

    positive_weight: float
    negative_weight: float
    base_rate: float
    negatives_per_positive: int


def calibration_weights(base_rate, negatives_per_positive) -> CalibrationWeights:
    """Weights for a synthetic sample of ``negatives_per_positive`` corruptions.

    ``base_rate`` is the assumed prior probability that a uniformly drawn
    candidate triple is true; it must lie strictly inside (0, 1).
    """
    alpha = open_unit_interval(base_rate, "base_rate")
    eta = positive_int(negatives_per_positive, "negatives_per_positive")
    return CalibrationWeights(float(eta), 1.0 / alpha - 1.0, alpha, eta)


def _smoothed_targets(labels, weights):
    """Label-smoothed regression targets for logistic calibration.

    Positives get ``(W+ + 1) / (W+ + 2)`` and negatives ``1 / (W- + 2)``,
    where W+/W- are the weighted class totals. This is the Bayes-rule
    smoothing that keeps the fit finite even when a class is rare or absent.
    """
    w_pos = float(weights[labels].sum())
    w_neg = float(weights[~labels].sum())
    t_pos = (w_pos + 1.0) / (w_pos + 2.0)
    t_neg = 1.0 / (w_neg + 2.0)
    return np.where(labels, t_pos, t_neg)


class PlattCalibrator(BaseEstimator):
    """Logistic calibration: probability = sigmoid(slope * score + intercept).

    Fitted by Newton's method with step halving on the weighted, smoothed
    negative log-likelihood; the objective is convex, so the optimum is
    unique. ``slope_`` comes out positive when higher scores indicate more
    plausible triples.

    Attributes after fit: ``slope_``, ``intercept_``, ``n_iter_``,
    ``converged_``, ``objective_history_``, ``degenerate_`` (True when the
    fitted map ignores the score, e.g. single-class data or constant scores).
    """

    def __init__(self, tol=1e-8, max_iter=100):
        # tol bounds the max-norm of the per-unit-weight NLL gradient, so the
        # stopping rule does not depend on sample size or weight scale.
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, scores, labels, sample_weight=None):
        scores = as_float_array(scores, "scores")
        labels = as_label_array(labels)
        check_same_length(scores=scores, labels=labels)
        if scores.shape[0] == 0:
            raise FitError("cannot fit a calibrator on an empty sample")
        weights = as_weight_array(sample_weight, scores.shape[0])
        targets = _smoothed_targets(labels, weights)
        single_class = bool(labels.all() or (~labels).all())

        t_mean = float(np.average(targets, weights=weights))
        intercept = float(np.log(t_mean / (1.0 - t_mean)))
        slope = 0.0

        if np.ptp(scores) == 0.0:
            # Constant scores: slope is unidentifiable, intercept alone is optimal.
            self.slope_, self.intercept_ = 0.0, intercept
            self.n_iter_ = 0
            self.converged_ = True
            self.objective_history_ = [self._objective(scores, targets, weights, 0.0, intercept)]
            self.degenerate_ = True
            warnings.warn("calibration scores are constant; fitted map ignores the score")
            return self

        objective = self._objective(scores, targets, weights, slope, intercept)
        history = [objective]
        converged = False
        n_iter = 0
        weight_total = float(weights.sum())
        for n_iter in range(1, self.max_iter + 1):
            z = slope * scores + intercept
            p = expit(z)
            residual = weights * (p - targets)
            grad = np.array([float(residual @ scores), float(residual.sum())])
            if np.max(np.abs(grad)) / weight_total <= self.tol:
                converged = True
                n_iter -= 1
                break
            curvature = weights * p * (1.0 - p)
            h_ss = float(curvature @ (scores * scores))
            h_sb = float(curvature @ scores)
            h_bb = float(curvature.sum())
            hessian = np.array([[h_ss, h_sb], [h_sb, h_bb]])
            hessian[np.diag_indices(2)] += 1e-12
            try:
                direction = np.linalg.solve(hessian, -grad)
            except np.linalg.LinAlgError:
                direction = -grad
            step = 1.0
            new_slope, new_intercept, new_objective = slope, intercept, objective
            for _ in range(60):
                cand_slope = slope + step * direction[0]
                cand_intercept = intercept + step * direction[1]
                cand_objective = self._objective(
                    scores, targets, weights, cand_slope, cand_intercept
                )
                if cand_objective <= objective:
                    new_slope, new_intercept, new_objective = (
                        cand_slope,
                        cand_intercept,
                        cand_objective,
                    )
                    break
                step *= 0.5
            slope, intercept, objective = new_slope, new_intercept, new_objective
            history.append(objective)
        else:
            z = slope * scores + intercept
            residual = weights * (expit(z) - targets)
            grad_norm = max(abs(float(residual @ scores)), abs(float(residual.sum())))
            grad_norm /= weight_total
            if grad_norm > self.tol:
                raise ConvergenceError(
                    f"logistic calibration did not reach gradient tolerance "
                    f"{self.tol} in {self.max_iter} iterations "
                    f"(gradient norm {grad_norm:.3e})",
                    slope=slope,
                    intercept=intercept,
                    n_iter=self.max_iter,
                )
            converged = True

        self.slope_ = float(slope)
        self.intercept_ = float(intercept)
        self.n_iter_ = n_iter
        self.converged_ = converged
        self.objective_history_ = history
        self.degenerate_ = single_class
        if single_class:
            warnings.warn(
                "calibration sample contains a single class; fit is degenerate"
            )
        return self

    @staticmethod
    def _objective(scores, targets, weights, slope, intercept):
        # Weighted cross-entropy against smoothed targets, written in the
        # overflow-safe form sum w * (log(1 + e^z) - t*z).
        z = slope * scores + intercept
        return float(np.sum(weights * (np.logaddexp(0.0, z) - targets * z)))

    def _check_fitted(self):
        if not hasattr(self, "slope_"):
            raise NotFittedError("PlattCalibrator is not fitted")

    def predict(self, scores):
        """Calibrated probabilities for raw scores."""
        self._check_fitted()
        scores = as_float_array(scores, "scores")
        return expit(self.slope_ * scores + self.intercept_)


def _weighted_pava(values, weights):
    """Weighted pool-adjacent-violators; returns the non-decreasing fit.

    Inputs must already be ordered by the predictor. Blocks are merged only
    on strict decreases, each merge replacing two blocks by their weighted
    mean.
    """
    means: list[float] = []
    block_weights: list[float] = []
    counts: list[int] = []
    for value, weight in zip(values, weights):
        means.append(float(value))
        block_weights.append(float(weight))
        counts.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            merged_weight = block_weights[-2] + block_weights[-1]
            merged_mean = (
                means[-2] * block_weights[-2] + means[-1] * block_weights[-1]
            ) / merged_weight
            means[-2:] = [merged_mean]
            block_weights[-2:] = [merged_weight]
            counts[-2:] = [counts[-2] + counts[-1]]
    return np.repeat(means, counts)


class IsotonicCalibrator(BaseEstimator):
    """Isotonic calibration: a non-decreasing step function of the score.

    Fitting sorts the sample by score, pools exact score ties by weighted
    mean, then runs weighted pool-adjacent-violators. Prediction is a
    left-closed step lookup: the probability at a score is the fitted value
    of the largest breakpoint not exceeding it, clamped to the fitted range
    outside the observed scores.

    Attributes after fit: ``breakpoints_`` (strictly increasing),
    ``values_`` (non-decreasing, within [0, 1], same length), ``degenerate_``.
    """

    def fit(self, scores, labels, sample_weight=None):
        scores = as_float_array(scores, "scores")
        labels = as_label_array(labels)
        check_same_length(scores=scores, labels=labels)
        if scores.shape[0] == 0:
            raise FitError("cannot fit a calibrator on an empty sample")
        weights = as_weight_array(sample_weight, scores.shape[0])
        targets = labels.astype(np.float64)

        order = np.argsort(scores, kind="stable")
        s = scores[order]
        t = targets[order]
        w = weights[order]

        # Pool exact score ties before PAVA: one block per distinct score.
        distinct, start = np.unique(s, return_index=True)
        tie_weights = np.add.reduceat(w, start)
        tie_means = np.add.reduceat(w * t, start) / tie_weights

        fitted = _weighted_pava(tie_means, tie_weights)
        fitted = np.clip(fitted, 0.0, 1.0)

        # Runs of equal fitted values collapse to one breakpoint; prediction
        # is unchanged because lookups are left-closed.
        keep = np.empty(fitted.shape[0], dtype=bool)
        keep[0] = True
        np.not_equal(fitted[1:], fitted[:-1], out=keep[1:])
        self.breakpoints_ = distinct[keep]
        self.values_ = fitted[keep]
        self.degenerate_ = bool(labels.all() or (~labels).all())
        if self.degenerate_:
            warnings.warn(
                "calibration sample contains a single class; fit is degenerate"
            )
        return self

    def _check_fitted(self):
        if not hasattr(self, "breakpoints_"):
            raise NotFittedError("IsotonicCalibrator is not fitted")

    def predict(self, scores):
        """Calibrated probabilities for raw scores."""
        self._check_fitted()
        scores = as_float_array(scores, "scores")
        idx = np.searchsorted(self.breakpoints_, scores, side="right") - 1
        idx = np.clip(idx, 0, self.breakpoints_.shape[0] - 1)
        return self.values_[idx]


def make_calibrator(method: str, **params):
    if method == "platt":
        return PlattCalibrator(**params)
    if method == "isotonic":
        return IsotonicCalibrator(**params)
    raise ConfigError(
        f"unknown calibration method {method!r}; expected one of {CALIBRATION_METHODS}"
    )


class CalibrationSample(NamedTuple):
    """Scores, labels, and weights ready for a calibrator, plus provenance."""

    scores: np.ndarray
    labels: np.ndarray
    sample_weight: np.ndarray | None
    meta: dict


def build_calibration_sample(
    predict,
    data,
    strategy: str = "ground-truth",
    *,
    base_rate: float = 0.5,
    negatives_per_positive: int = 20,
    seed: int = 0,
    n_entities: int | None = None,
    filter_index=None,
) -> CalibrationSample:
    """Assemble the (scores, labels, weights) sample a calibrator is fit on.

    Args:
        predict: callable mapping an (n, 3) id array to raw scores.
        data: a :class:`LabeledTriples` split (required for strategy
            ``"ground-truth"``) or any positive triple source (labeled split,
            graph, or id array) for ``"synthetic"``.
        strategy: ``"ground-truth"`` scores the split as-is with unit
            weights; ``"synthetic"`` corrupts each positive
            ``negatives_per_positive`` times and applies the base-rate
            weights from :func:`calibration_weights`.
        n_entities: entity vocabulary size; required for ``"synthetic"``
            unless ``data`` carries vocabularies.
        filter_index: optional known-positive index; synthetic corruptions
            found in it are dropped (by default they are kept, which is the
            closed-world assumption).
    """
    if strategy not in CALIBRATION_STRATEGIES:
        raise ConfigError(
            f"unknown calibration strategy {strategy!r}; "
            f"expected one of {CALIBRATION_STRATEGIES}"
        )
    if strategy == "ground-truth":
        if not isinstance(data, LabeledTriples):
            raise ConfigError(
                "ground-truth calibration requires a labeled split with negatives"
            )
        scores = np.asarray(predict(data.triples), dtype=np.float64)
        labels = data.labels.copy()
        meta = {
            "strategy": "ground-truth",
            "base_rate": None,
            "negatives_per_positive": None,
            "seed": None,
            "n_positives": int(labels.sum()),
            "n_negatives": int((~labels).sum()),
            "source_hash": triples_content_hash(data.triples, labels),
        }
        return CalibrationSample(scores, labels, None, meta)

    if isinstance(data, LabeledTriples):
        positives = data.positives
        n_entities = len(data.entities)
    elif isinstance(data, KnowledgeGraph):
        positives = data.triples
        n_entities = data.n_entities
    else:
        positives = np.asarray(data, dtype=np.int64)
        if n_entities is None:
            raise ConfigError("n_entities is required when data is a bare id array")
    if positives.shape[0] == 0:
        raise FitError("synthetic calibration needs at least one positive triple")

    weights_spec = calibration_weights(base_rate, negatives_per_positive)
    rng = np.random.default_rng(seed)
    batch = sample_corruptions(
        positives, weights_spec.negatives_per_positive, n_entities, rng
    )
    negatives = batch.negatives
    n_dropped = 0
    if filter_index is not None:
        known = filter_index.contains_mask(negatives)
        n_dropped = int(known.sum())
        negatives = negatives[~known]
        if negatives.shape[0] == 0:
            raise FitError(
                "every synthetic corruption collided with a known positive"
            )

    triples = np.concatenate([positives, negatives])
    labels = np.concatenate(
        [np.ones(positives.shape[0], dtype=bool), np.zeros(negatives.shape[0], dtype=bool)]
    )
    sample_weight = np.where(
        labels, weights_spec.positive_weight, weights_spec.negative_weight
    )
    scores = np.asarray(predict(triples), dtype=np.float64)
    meta = {
        "strategy": "synthetic",
        "base_rate": weights_spec.base_rate,
        "negatives_per_positive": weights_spec.negatives_per_positive,
        "seed": int(seed),
        "n_positives": int(positives.shape[0]),
        "n_negatives": int(negatives.shape[0]),
        "filtered": filter_index is not None,
        "n_filtered_out": n_dropped,
        "source_hash": triples_content_hash(positives),
    }
    return CalibrationSample(scores, labels, sample_weight, meta)


def calibrate(
    model,
    data,
    method: str = "platt",
    strategy: str = "ground-truth",
    *,
    base_rate: float = 0.5,
    negatives_per_positive: int = 20,
    seed: int = 0,
    filter_index=None,
    **calibrator_params,
):
    """Fit a calibrator of ``method`` on a sample built per ``strategy``.

    ``model`` is anything with a ``predict`` method over id triples (or a
    bare callable). Returns the fitted calibrator with the sample's
    provenance attached as ``strategy_meta_``.
    """
    predict = model.predict if hasattr(model, "predict") else model
    n_entities = getattr(model, "n_entities_", None)
    sample = build_calibration_sample(
        predict,
        data,
        strategy,
        base_rate=base_rate,
        negatives_per_positive=negatives_per_positive,
        seed=seed,
        n_entities=n_entities,
        filter_index=filter_index,
    )
    calibrator = make_calibrator(method, **calibrator_params)
    calibrator.fit(sample.scores, sample.labels, sample.sample_weight)
    calibrator.strategy_meta_ = sample.meta
    return calibrator


def save_calibrator(calibrator, path) -> None:
    """Serialize a fitted calibrator to a JSON document.

    Platt: ``{"method": "platt", "a": slope, "b": intercept, "metadata": ...}``.
    Isotonic: ``{"method": "isotonic", "breakpoints": [...], "values": [...],
    "metadata": ...}``. Metadata records the sampling strategy, the assumed
    base rate (``alpha``), corruptions per positive (``eta``), the sampling
    seed, and a hash of the source split.
    """
    meta = getattr(calibrator, "strategy_meta_", {})
    metadata = {
        "strategy": meta.get("strategy"),
        "alpha": meta.get("base_rate"),
        "eta": meta.get("negatives_per_positive"),
        "seed": meta.get("seed"),
        "source_split_hash": meta.get("source_hash"),
        "filtered": meta.get("filtered", False),
    }
    if isinstance(calibrator, PlattCalibrator):
        calibrator._check_fitted()
        doc = {
            "method": "platt",
            "a": calibrator.slope_,
            "b": calibrator.intercept_,
            "metadata": metadata,
        }
    elif isinstance(calibrator, IsotonicCalibrator):
        calibrator._check_fitted()
        doc = {
            "method": "isotonic",
            "breakpoints": [float(x) for x in calibrator.breakpoints_],
            "values": [float(x) for x in calibrator.values_],
            "metadata": metadata,
        }
    else:
        raise ConfigError(f"cannot serialize calibrator of type {type(calibrator).__name__}")
    with open(str(path), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_calibrator(path):
    """Load a calibrator saved by :func:`save_calibrator`."""
    with open(str(path), encoding="utf-8") as fh:
        doc = json.load(fh)
    method = doc.get("method")
    metadata = doc.get("metadata", {})
    meta = {
        "strategy": metadata.get("strategy"),
        "base_rate": metadata.get("alpha"),
        "negatives_per_positive": metadata.get("eta"),
        "seed": metadata.get("seed"),
        "source_hash": metadata.get("source_split_hash"),
        "filtered": metadata.get("filtered", False),
    }
    if method == "platt":
        calibrator = PlattCalibrator()
        calibrator.slope_ = float(doc["a"])
        calibrator.intercept_ = float(doc["b"])
        calibrator.n_iter_ = None
        calibrator.converged_ = True
        calibrator.objective_history_ = []
        calibrator.degenerate_ = doc.get("degenerate", False)
    elif method == "isotonic":
        calibrator = IsotonicCalibrator()
        breakpoints = np.asarray(doc["breakpoints"], dtype=np.float64)
        values = np.asarray(doc["values"], dtype=np.float64)
        if breakpoints.ndim != 1 or breakpoints.shape != values.shape:
            raise ConfigError(f"{path}: breakpoints/values shape mismatch")
        if breakpoints.size == 0:
            raise ConfigError(f"{path}: empty isotonic calibrator")
        if np.any(np.diff(breakpoints) <= 0):
            raise ConfigError(f"{path}: breakpoints must be strictly increasing")
        if np.any(np.diff(values) < 0) or values.min() < 0 or values.max() > 1:
            raise ConfigError(f"{path}: values must be non-decreasing within [0, 1]")
        calibrator.breakpoints_ = breakpoints
        calibrator.values_ = values
        calibrator.degenerate_ = doc.get("degenerate", False)
    else:
        raise ConfigError(f"{path}: unknown calibration method {method!r}")
    calibrator.strategy_meta_ = meta
    return calibrator
