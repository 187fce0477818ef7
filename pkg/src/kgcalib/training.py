"""Mini-batch training loop for embedding models.

The loop is pure numpy: scores and their analytic gradients come from
:mod:`.scoring`, loss derivatives from :mod:`.losses`, and parameter updates
from a row-sparse Adam that only touches rows appearing in the batch. All
randomness flows from ``seed`` through fixed stream tags, so a (graph, kind,
config) triple reproduces training bit for bit.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .exceptions import ConfigError, DivergenceError
from .losses import LOSS_KINDS, compute_loss
from .sampling import CORRUPTION_MODES, sample_corruptions
from .scoring import MODEL_KINDS, init_embeddings, score_and_grad
from .validation import open_unit_interval, positive_float, positive_int

# Stream tags keep the shuffle and corruption generators independent of each
# other and of the init draw for every (epoch, batch).
_SHUFFLE_STREAM = 1
_CORRUPTION_STREAM = 2


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for :func:`train_embeddings`."""

    embedding_dim: int = 100
    negatives_per_positive: int = 20
    epochs: int = 100
    learning_rate: float = 1e-4
    batch_size: int = 512
    loss: str = "self_adversarial"
    margin: float = 1.0
    adversarial_temperature: float = 1.0
    corruption_mode: str = "uniform-entities"
    normalize_entities: bool = False
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0

    def validated(self) -> "TrainConfig":
        positive_int(self.embedding_dim, "embedding_dim")
        positive_int(self.negatives_per_positive, "negatives_per_positive")
        positive_int(self.epochs, "epochs")
        positive_int(self.batch_size, "batch_size")
        positive_float(self.learning_rate, "learning_rate")
        positive_float(self.adversarial_temperature, "adversarial_temperature")
        positive_float(self.adam_epsilon, "adam_epsilon")
        open_unit_interval(self.adam_beta1, "adam_beta1")
        open_unit_interval(self.adam_beta2, "adam_beta2")
        if not math.isfinite(self.margin) or self.margin < 0:
            raise ConfigError(f"margin must be a non-negative number, got {self.margin!r}")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"unknown loss {self.loss!r}; expected one of {LOSS_KINDS}")
        if self.corruption_mode not in CORRUPTION_MODES:
            raise ConfigError(
                f"unknown corruption mode {self.corruption_mode!r}; "
                f"expected one of {CORRUPTION_MODES}"
            )
        if not isinstance(self.seed, (int, np.integer)) or isinstance(self.seed, bool):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        return self


class RowAdam:
    """Adam that updates only the rows named in each step.

    First/second moments and the bias-correction step count are kept per row;
    a row absent from a step keeps its parameters and state bit-identical,
    and a fresh row given an all-zero gradient does not move. A dense Adam
    would drift such rows through stale momentum.
    """

    def __init__(self, n_rows, width, learning_rate, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m = np.zeros((n_rows, width))
        self.v = np.zeros((n_rows, width))
        self.step_count = np.zeros(n_rows, dtype=np.int64)

    def step(self, params, rows, grads):
        """Apply one update to ``params[rows]`` given gradient rows ``grads``.

        ``rows`` must not contain repeats; accumulate duplicate contributions
        first (see :func:`accumulate_by_row`).
        """
        self.step_count[rows] += 1
        t = self.step_count[rows][:, None].astype(np.float64)
        m = self.m[rows] * self.beta1 + (1.0 - self.beta1) * grads
        v = self.v[rows] * self.beta2 + (1.0 - self.beta2) * np.square(grads)
        self.m[rows] = m
        self.v[rows] = v
        m_hat = m / (1.0 - self.beta1**t)
        v_hat = v / (1.0 - self.beta2**t)
        params[rows] -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)


def accumulate_by_row(rows, grads):
    """Sum gradient rows that target the same parameter row.

    Returns (unique_rows, summed_grads). Uses np.add.at, which applies
    contributions in argument order, so results are deterministic.
    """
    unique_rows, inverse = np.unique(rows, return_inverse=True)
    summed = np.zeros((unique_rows.shape[0], grads.shape[1]))
    np.add.at(summed, inverse, grads)
    return unique_rows, summed


@dataclass
class TrainResult:
    entity_emb: np.ndarray
    relation_emb: np.ndarray
    loss_history: list[float] = field(default_factory=list)
    epoch_wall_ms: list[float] = field(default_factory=list)


def train_embeddings(
    graph,
    kind: str,
    config: TrainConfig,
    norm_order: int = 2,
    on_epoch: Callable[[int, float, float], None] | None = None,
) -> TrainResult:
    """Train embeddings for ``graph`` with the given model kind and config.

    Per epoch: shuffle triples, then for each mini-batch draw corruptions,
    score positives and negatives with analytic gradients, chain through the
    loss, accumulate per-row gradients, and take one sparse Adam step per
    embedding matrix. ``loss_history`` records the epoch loss divided by the
    number of training triples. ``on_epoch(epoch, mean_loss, wall_ms)`` fires
    after every epoch, e.g. to stream a training log.

    Raises DivergenceError as soon as a batch loss is non-finite.
    """
    config = config.validated()
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    triples = graph.triples
    n = triples.shape[0]
    if n == 0:
        raise ConfigError("cannot train on an empty graph")
    if norm_order not in (1, 2):
        raise ConfigError(f"norm_order must be 1 or 2, got {norm_order!r}")

    n_entities = graph.n_entities
    n_relations = graph.n_relations
    entity_emb, relation_emb = init_embeddings(
        kind, config.embedding_dim, n_entities, n_relations, config.seed
    )
    opt_entities = RowAdam(
        n_entities, entity_emb.shape[1], config.learning_rate,
        config.adam_beta1, config.adam_beta2, config.adam_epsilon,
    )
    opt_relations = RowAdam(
        n_relations, relation_emb.shape[1], config.learning_rate,
        config.adam_beta1, config.adam_beta2, config.adam_epsilon,
    )

    eta = config.negatives_per_positive
    n_batches = -(-n // config.batch_size)
    result = TrainResult(entity_emb, relation_emb)

    for epoch in range(config.epochs):
        started = time.perf_counter()
        order = np.random.default_rng([config.seed, _SHUFFLE_STREAM, epoch]).permutation(n)
        epoch_loss = 0.0
        for batch_index in range(n_batches):
            batch_ids = order[batch_index * config.batch_size : (batch_index + 1) * config.batch_size]
            pos = triples[batch_ids]
            rng = np.random.default_rng(
                [config.seed, _CORRUPTION_STREAM, epoch, batch_index]
            )
            batch = sample_corruptions(
                pos, eta, n_entities, rng, mode=config.corruption_mode
            )
            neg = batch.negatives

            pos_scores, (gs_p, gp_p, go_p) = score_and_grad(
                kind, entity_emb, relation_emb, pos, norm_order
            )
            neg_scores, (gs_n, gp_n, go_n) = score_and_grad(
                kind, entity_emb, relation_emb, neg, norm_order
            )
            value, d_pos, d_neg = compute_loss(
                config.loss,
                pos_scores,
                neg_scores.reshape(pos.shape[0], eta),
                margin=config.margin,
                adversarial_temperature=config.adversarial_temperature,
            )
            if not math.isfinite(value):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch {batch_index}; "
                    "lower the learning rate or switch loss",
                    epoch=epoch,
                    batch=batch_index,
                )
            epoch_loss += value

            d_neg_flat = d_neg.reshape(-1, 1)
            d_pos_col = d_pos[:, None]
            entity_rows = np.concatenate([pos[:, 0], pos[:, 2], neg[:, 0], neg[:, 2]])
            entity_grads = np.concatenate(
                [d_pos_col * gs_p, d_pos_col * go_p, d_neg_flat * gs_n, d_neg_flat * go_n]
            )
            relation_rows = np.concatenate([pos[:, 1], neg[:, 1]])
            relation_grads = np.concatenate([d_pos_col * gp_p, d_neg_flat * gp_n])

            rows_e, grads_e = accumulate_by_row(entity_rows, entity_grads)
            rows_r, grads_r = accumulate_by_row(relation_rows, relation_grads)
            opt_entities.step(entity_emb, rows_e, grads_e)
            opt_relations.step(relation_emb, rows_r, grads_r)

            if config.normalize_entities:
                norms = np.linalg.norm(entity_emb[rows_e], axis=1, keepdims=True)
                entity_emb[rows_e] /= np.maximum(norms, 1e-12)

        mean_loss = epoch_loss / n
        wall_ms = (time.perf_counter() - started) * 1000.0
        result.loss_history.append(mean_loss)
        result.epoch_wall_ms.append(wall_ms)
        if on_epoch is not None:
            on_epoch(epoch, mean_loss, wall_ms)
    return result
