"""Evaluation: calibration error, reliability bins, ranking, classification.

Ranking follows the corruption protocol: every positive is ranked against
all candidate replacements of one side, the true entity itself is never a
candidate, and in filtered mode candidates that are known positives are
masked out. Ties are counted against the model by default (a constant scorer
over E entities yields rank E).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .exceptions import ConfigError, FitError
from .validation import (
    as_float_array,
    as_label_array,
    as_probability_array,
    as_triple_array,
    as_weight_array,
    check_same_length,
)

TIE_POLICIES = ("pessimistic", "optimistic", "mean")


def brier_score(probs, labels, sample_weight=None) -> float:
    """Weighted mean squared difference between probabilities and outcomes."""
    probs = as_probability_array(probs)
    labels = as_label_array(labels)
    check_same_length(probs=probs, labels=labels)
    weights = as_weight_array(sample_weight, probs.shape[0])
    return float(np.average((probs - labels) ** 2, weights=weights))


def log_loss(probs, labels, sample_weight=None, clip_eps=1e-15) -> float:
    """Weighted negative log-likelihood with probability clipping.

    Probabilities are clipped into [clip_eps, 1 - clip_eps] so degenerate
    calibrators yield a large finite penalty instead of infinity.
    """
    if not 0.0 < clip_eps < 0.5:
        raise ConfigError(f"clip_eps must lie in (0, 0.5), got {clip_eps!r}")
    probs = as_probability_array(probs)
    labels = as_label_array(labels)
    check_same_length(probs=probs, labels=labels)
    weights = as_weight_array(sample_weight, probs.shape[0])
    p = np.clip(probs, clip_eps, 1.0 - clip_eps)
    per_sample = np.where(labels, -np.log(p), -np.log1p(-p))
    return float(np.average(per_sample, weights=weights))


@dataclass
class ReliabilityDiagram:
    """Equal-width reliability bins over [0, 1].

    Bins are left-closed; the last bin additionally includes 1.0. Empty bins
    keep a zero count with NaN mean/frequency.
    """

    bin_edges: np.ndarray
    counts: np.ndarray
    mean_predicted: np.ndarray
    observed_frequency: np.ndarray

    @property
    def n_bins(self) -> int:
        return self.counts.shape[0]

    def max_gap(self, min_count: int = 1) -> float:
        """Largest |mean_predicted - observed_frequency| over populated bins."""
        mask = self.counts >= min_count
        if not mask.any():
            return float("nan")
        return float(
            np.max(np.abs(self.mean_predicted[mask] - self.observed_frequency[mask]))
        )


def reliability_bins(probs, labels, n_bins: int = 10) -> ReliabilityDiagram:
    """Bin predictions into ``n_bins`` equal-width probability bins.

    Bin edges are computed as i / n_bins so that a probability exactly equal
    to an edge double lands in the right-hand bin; deriving the index by
    multiplying and truncating would misplace values like 0.7 with ten bins.
    """
    if n_bins < 2:
        raise ConfigError(f"n_bins must be >= 2, got {n_bins}")
    probs = as_probability_array(probs)
    labels = as_label_array(labels)
    check_same_length(probs=probs, labels=labels)
    edges = np.arange(n_bins + 1, dtype=np.float64) / n_bins
    idx = np.clip(np.searchsorted(edges, probs, side="right") - 1, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins).astype(np.int64)
    sum_p = np.bincount(idx, weights=probs, minlength=n_bins)
    sum_y = np.bincount(idx, weights=labels.astype(np.float64), minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_predicted = np.where(counts > 0, sum_p / np.maximum(counts, 1), np.nan)
        observed = np.where(counts > 0, sum_y / np.maximum(counts, 1), np.nan)
    return ReliabilityDiagram(edges, counts, mean_predicted, observed)


def write_reliability_csv(diagram: ReliabilityDiagram, path) -> None:
    """Write one row per bin: bin_low, bin_high, mean_predicted, frequency, count.

    A diagram fitted on zero samples writes the header only; otherwise every
    bin appears, empty ones with count 0 and blank mean/frequency fields.
    """
    lines = ["bin_low,bin_high,mean_predicted,frequency,count"]
    if int(diagram.counts.sum()) > 0:
        for b in range(diagram.n_bins):
            low = diagram.bin_edges[b]
            high = diagram.bin_edges[b + 1]
            count = int(diagram.counts[b])
            if count > 0:
                mean_p = f"{diagram.mean_predicted[b]:.10g}"
                freq = f"{diagram.observed_frequency[b]:.10g}"
            else:
                mean_p = ""
                freq = ""
            lines.append(f"{low:.10g},{high:.10g},{mean_p},{freq},{count}")
    with open(str(path), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass
class RankReport:
    """Aggregate ranking metrics plus the raw per-triple ranks."""

    mean_rank: float
    mean_reciprocal_rank: float
    hits_at: dict[int, float]
    filtered: bool
    tie_policy: str
    subject_ranks: np.ndarray = field(repr=False)
    object_ranks: np.ndarray = field(repr=False)

    @property
    def n_ranks(self) -> int:
        return self.subject_ranks.shape[0] + self.object_ranks.shape[0]

    @property
    def mode(self) -> str:
        return "filtered" if self.filtered else "raw"

    def to_dict(self) -> dict:
        return {
            "mean_rank": self.mean_rank,
            "mean_reciprocal_rank": self.mean_reciprocal_rank,
            "hits_at": {str(k): v for k, v in self.hits_at.items()},
            "mode": self.mode,
            "tie_policy": self.tie_policy,
            "n_ranks": self.n_ranks,
            "subject_ranks": [float(r) for r in self.subject_ranks],
            "object_ranks": [float(r) for r in self.object_ranks],
        }


def _rank_from_comparisons(n_greater, n_tied, tie_policy):
    if tie_policy == "pessimistic":
        return 1.0 + n_greater + n_tied
    if tie_policy == "optimistic":
        return 1.0 + n_greater
    return 1.0 + n_greater + 0.5 * n_tied


def _side_ranks(predict, positives, n_entities, side, filter_index, tie_policy, chunk_rows):
    column = 0 if side == "subject" else 2
    n = positives.shape[0]
    ranks = np.empty(n, dtype=np.float64)
    per_chunk = max(1, chunk_rows // n_entities)
    entity_ids = np.arange(n_entities, dtype=np.int64)
    for start in range(0, n, per_chunk):
        block = positives[start : start + per_chunk]
        m = block.shape[0]
        candidates = np.repeat(block, n_entities, axis=0)
        candidates[:, column] = np.tile(entity_ids, m)
        scores = np.asarray(predict(candidates), dtype=np.float64).reshape(m, n_entities)
        true_ids = block[:, column]
        row_ids = np.arange(m)
        true_scores = scores[row_ids, true_ids]
        valid = np.ones((m, n_entities), dtype=bool)
        valid[row_ids, true_ids] = False
        if filter_index is not None:
            for i in range(m):
                s, p, o = block[i]
                if side == "object":
                    known = filter_index.known_objects(s, p)
                else:
                    known = filter_index.known_subjects(p, o)
                if known.size:
                    valid[i, known] = False
            # The probe triple itself must always stay out of the candidates,
            # which its own column slot already guarantees; known positives
            # elsewhere are gone now.
        n_greater = ((scores > true_scores[:, None]) & valid).sum(axis=1)
        n_tied = ((scores == true_scores[:, None]) & valid).sum(axis=1)
        ranks[start : start + m] = _rank_from_comparisons(n_greater, n_tied, tie_policy)
    return ranks


def ranked_eval(
    predict,
    positives,
    n_entities: int,
    *,
    hits_at=(1, 3, 10),
    filter_index=None,
    tie_policy: str = "pessimistic",
    chunk_rows: int = 1 << 20,
) -> RankReport:
    """Rank every positive against subject- and object-side corruptions.

    Args:
        predict: callable (or estimator) mapping an (n, 3) id array to scores.
        positives: (n, 3) evaluation triples, all assumed true.
        n_entities: entity vocabulary size; candidates are all entity ids.
        hits_at: cutoffs for the hits-at-N fractions.
        filter_index: when given, ranking is "filtered": candidate triples
            found in the index are skipped (the probe triple never competes
            against other known positives). Without it, ranking is "raw".
        tie_policy: how candidates tied with the true score count:
            "pessimistic" (all count, the default), "optimistic" (none), or
            "mean" (half).

    The aggregate is computed over subject-side ranks followed by
    object-side ranks (2n ranks total; the order only matters for readers of
    the raw rank arrays, the means are order-free).
    """
    if tie_policy not in TIE_POLICIES:
        raise ConfigError(f"tie_policy must be one of {TIE_POLICIES}, got {tie_policy!r}")
    if hasattr(predict, "predict"):
        predict = predict.predict
    positives = as_triple_array(positives, n_entities=n_entities)
    if positives.shape[0] == 0:
        raise ConfigError("ranked_eval requires at least one positive triple")
    hits_at = tuple(int(h) for h in hits_at)
    if any(h < 1 for h in hits_at):
        raise ConfigError(f"hits_at cutoffs must be >= 1, got {hits_at}")

    subject_ranks = _side_ranks(
        predict, positives, n_entities, "subject", filter_index, tie_policy, chunk_rows
    )
    object_ranks = _side_ranks(
        predict, positives, n_entities, "object", filter_index, tie_policy, chunk_rows
    )
    all_ranks = np.concatenate([subject_ranks, object_ranks])
    return RankReport(
        mean_rank=float(np.mean(all_ranks)),
        mean_reciprocal_rank=float(np.mean(1.0 / all_ranks)),
        hits_at={h: float(np.mean(all_ranks <= h)) for h in hits_at},
        filtered=filter_index is not None,
        tie_policy=tie_policy,
        subject_ranks=subject_ranks,
        object_ranks=object_ranks,
    )


@dataclass
class ThresholdTable:
    """Per-relation decision thresholds with a pooled fallback.

    ``thresholds[r]`` classifies a triple of relation r as positive when its
    score is >= the threshold. Relations unseen during learning fall back to
    ``global_threshold``.
    """

    thresholds: dict[int, float]
    global_threshold: float

    def threshold_for(self, relation_id: int) -> float:
        return self.thresholds.get(int(relation_id), self.global_threshold)


def _best_threshold(scores, labels):
    """Accuracy-maximizing threshold for ``predicted = score >= threshold``.

    Candidates are midpoints between adjacent distinct scores plus -inf
    (accept everything) and +inf (reject everything); accuracy ties resolve
    to the smallest candidate.
    """
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    y = labels[order]
    distinct, start = np.unique(s, return_index=True)
    group_sizes = np.diff(np.append(start, s.shape[0]))
    pos_per_group = np.add.reduceat(y.astype(np.int64), start)
    neg_per_group = group_sizes - pos_per_group

    correct = int(labels.sum())  # threshold -inf predicts everything positive
    best_correct = correct
    best_tau = -np.inf
    for g in range(distinct.shape[0]):
        # Raising the threshold past this score group flips it to negative.
        correct += int(neg_per_group[g]) - int(pos_per_group[g])
        if g + 1 < distinct.shape[0]:
            tau = 0.5 * (distinct[g] + distinct[g + 1])
        else:
            tau = np.inf
        if correct > best_correct:
            best_correct = correct
            best_tau = float(tau)
    return best_tau, best_correct


def learn_thresholds(scores, labels, relations) -> ThresholdTable:
    """Learn one accuracy-maximizing threshold per relation, plus a pooled one.

    ``relations`` gives the relation id of each scored triple. Every relation
    present in the sample gets its own threshold, even from a single-class
    subsample (the sentinel candidates cover those); the pooled threshold
    over the full sample serves as the fallback for unseen relations.
    """
    scores = as_float_array(scores, "scores")
    labels = as_label_array(labels)
    relations = np.asarray(relations, dtype=np.int64)
    if relations.ndim != 1:
        raise ValueError(f"relations must be 1-dimensional, got shape {relations.shape}")
    check_same_length(scores=scores, labels=labels, relations=relations)
    if scores.shape[0] == 0:
        raise FitError("cannot learn thresholds from an empty sample")

    global_tau, _ = _best_threshold(scores, labels)
    per_relation = {}
    for rel in np.unique(relations):
        mask = relations == rel
        tau, _ = _best_threshold(scores[mask], labels[mask])
        per_relation[int(rel)] = tau
    return ThresholdTable(per_relation, global_tau)


class ClassificationResult(NamedTuple):
    predictions: np.ndarray
    accuracy: float | None
    fallback_relations: list[int]


def classify(scores, relations, thresholds, labels=None) -> ClassificationResult:
    """Apply thresholds: predicted positive iff score >= threshold.

    ``thresholds`` is a :class:`ThresholdTable` or a single float applied to
    every sample. ``fallback_relations`` lists relations that had no learned
    threshold and used the pooled fallback (a warning fires when that
    happens). Accuracy is filled in when ``labels`` are given.
    """
    scores = as_float_array(scores, "scores")
    relations = np.asarray(relations, dtype=np.int64)
    check_same_length(scores=scores, relations=relations)
    if isinstance(thresholds, ThresholdTable):
        taus = np.array(
            [thresholds.threshold_for(r) for r in relations], dtype=np.float64
        )
        fallback = sorted(
            {int(r) for r in np.unique(relations) if int(r) not in thresholds.thresholds}
        )
        if fallback:
            warnings.warn(
                f"no learned threshold for relations {fallback}; using the pooled fallback"
            )
    else:
        taus = float(thresholds)
        fallback = []
    predictions = scores >= taus
    acc = None
    if labels is not None:
        acc = accuracy(predictions, labels)
    return ClassificationResult(predictions, acc, fallback)


def accuracy(predictions, labels) -> float:
    predictions = as_label_array(predictions, "predictions")
    labels = as_label_array(labels)
    check_same_length(predictions=predictions, labels=labels)
    if predictions.shape[0] == 0:
        raise ValueError("accuracy of an empty sample is undefined")
    return float(np.mean(predictions == labels))


def _finite_or_str(x: float):
    if np.isposinf(x):
        return "inf"
    if np.isneginf(x):
        return "-inf"
    return float(x)


def _float_or_parse(x) -> float:
    if x == "inf":
        return np.inf
    if x == "-inf":
        return -np.inf
    return float(x)


def save_thresholds(table: ThresholdTable, path) -> None:
    """Write a threshold table as JSON; infinities become "inf"/"-inf"."""
    doc = {
        "relation_thresholds": {
            str(rel): _finite_or_str(tau) for rel, tau in sorted(table.thresholds.items())
        },
        "global_threshold": _finite_or_str(table.global_threshold),
    }
    with open(str(path), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_thresholds(path) -> ThresholdTable:
    with open(str(path), encoding="utf-8") as fh:
        doc = json.load(fh)
    thresholds = {
        int(rel): _float_or_parse(tau)
        for rel, tau in doc.get("relation_thresholds", {}).items()
    }
    return ThresholdTable(thresholds, _float_or_parse(doc["global_threshold"]))
