"""Training losses over positive scores and their grouped corruption scores.

Each loss takes ``pos_scores`` of shape (n,) and ``neg_scores`` of shape
(n, negatives_per_positive), where row i holds the corruption scores for
positive i. The return value is ``(value, d_pos, d_neg)``: the summed batch
loss and exact derivatives with respect to every score, shaped like the
inputs. Chaining those with the score gradients gives embedding gradients
without any autograd machinery.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, logsumexp

from .exceptions import ConfigError


def _check_shapes(pos_scores, neg_scores):
    pos_scores = np.asarray(pos_scores, dtype=np.float64)
    neg_scores = np.asarray(neg_scores, dtype=np.float64)
    if pos_scores.ndim != 1 or neg_scores.ndim != 2:
        raise ValueError(
            f"expected (n,) positives and (n, eta) negatives, got "
            f"{pos_scores.shape} and {neg_scores.shape}"
        )
    if neg_scores.shape[0] != pos_scores.shape[0]:
        raise ValueError(
            f"negative rows ({neg_scores.shape[0]}) must match positives "
            f"({pos_scores.shape[0]})"
        )
    if pos_scores.shape[0] == 0 or neg_scores.shape[1] == 0:
        raise ValueError("loss requires at least one positive and one negative per positive")
    return pos_scores, neg_scores


def pairwise_margin_loss(pos_scores, neg_scores, margin=1.0):
    """Hinge on the score gap: sum of max(0, margin + f_neg - f_pos)."""
    pos_scores, neg_scores = _check_shapes(pos_scores, neg_scores)
    gap = margin + neg_scores - pos_scores[:, None]
    active = gap > 0
    value = float(gap[active].sum())
    d_neg = active.astype(np.float64)
    d_pos = -d_neg.sum(axis=1)
    return value, d_pos, d_neg


def binary_nll_loss(pos_scores, neg_scores):
    """Logistic negative log-likelihood with labels +1 / -1 on raw scores."""
    pos_scores, neg_scores = _check_shapes(pos_scores, neg_scores)
    value = float(np.logaddexp(0.0, -pos_scores).sum() + np.logaddexp(0.0, neg_scores).sum())
    d_pos = -expit(-pos_scores)
    d_neg = expit(neg_scores)
    return value, d_pos, d_neg


def multiclass_nll_loss(pos_scores, neg_scores):
    """Softmax cross-entropy of each positive against its corruption group."""
    pos_scores, neg_scores = _check_shapes(pos_scores, neg_scores)
    stacked = np.concatenate([pos_scores[:, None], neg_scores], axis=1)
    lse = logsumexp(stacked, axis=1)
    value = float((lse - pos_scores).sum())
    q = np.exp(stacked - lse[:, None])
    d_pos = q[:, 0] - 1.0
    d_neg = q[:, 1:].copy()
    return value, d_pos, d_neg


def self_adversarial_loss(pos_scores, neg_scores, margin=1.0, adversarial_temperature=1.0):
    """Margin-shifted logistic loss with softmax-weighted negatives.

    Negative terms are weighted by a softmax over their own scores at the
    given temperature; the weights are treated as constants (no gradient
    flows through them).
    """
    pos_scores, neg_scores = _check_shapes(pos_scores, neg_scores)
    if not adversarial_temperature > 0:
        raise ConfigError(
            f"adversarial_temperature must be > 0, got {adversarial_temperature!r}"
        )
    logits = adversarial_temperature * neg_scores
    weights = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
    value = float(
        np.logaddexp(0.0, -(margin + pos_scores)).sum()
        + (weights * np.logaddexp(0.0, neg_scores + margin)).sum()
    )
    d_pos = -expit(-(margin + pos_scores))
    d_neg = weights * expit(neg_scores + margin)
    return value, d_pos, d_neg


LOSS_KINDS = ("pairwise", "nll", "multiclass_nll", "self_adversarial")


def compute_loss(kind, pos_scores, neg_scores, margin=1.0, adversarial_temperature=1.0):
    """Dispatch to a loss by name; see :data:`LOSS_KINDS`."""
    if kind == "pairwise":
        return pairwise_margin_loss(pos_scores, neg_scores, margin)
    if kind == "nll":
        return binary_nll_loss(pos_scores, neg_scores)
    if kind == "multiclass_nll":
        return multiclass_nll_loss(pos_scores, neg_scores)
    if kind == "self_adversarial":
        return self_adversarial_loss(pos_scores, neg_scores, margin, adversarial_temperature)
    raise ConfigError(f"unknown loss {kind!r}; expected one of {LOSS_KINDS}")
