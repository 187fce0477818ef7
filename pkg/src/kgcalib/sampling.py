"""Negative sampling by corrupting one side of a positive triple."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .exceptions import ConfigError, SamplingError
from .validation import as_triple_array

CORRUPTION_MODES = ("uniform-entities", "per-batch-entities")


class CorruptionBatch(NamedTuple):
    """Positives plus their generated corruptions.

    ``negatives`` has shape (n * per_positive, 3); rows [i*per_positive,
    (i+1)*per_positive) corrupt positive i. ``corrupted_side`` holds the
    column that was replaced (0 = subject, 2 = object). Arrays are read-only.
    """

    positives: np.ndarray
    negatives: np.ndarray
    corrupted_side: np.ndarray

    @property
    def per_positive(self) -> int:
        return self.negatives.shape[0] // max(self.positives.shape[0], 1)

    def grouped_negatives(self) -> np.ndarray:
        """Negatives reshaped to (n, per_positive, 3)."""
        n = self.positives.shape[0]
        return self.negatives.reshape(n, self.per_positive, 3)


def sample_corruptions(
    positives,
    per_positive: int,
    n_entities: int,
    rng: np.random.Generator,
    mode: str = "uniform-entities",
) -> CorruptionBatch:
    """Generate ``per_positive`` corruptions of each positive triple.

    For every corruption, the side (subject or object) is chosen uniformly,
    then the entity on that side is replaced by one drawn uniformly from the
    candidate pool excluding the original entity, so a corruption never
    reproduces its source triple. ``mode`` selects the pool:

    - ``"uniform-entities"``: all ``n_entities`` ids.
    - ``"per-batch-entities"``: only entities occurring in ``positives``.

    Raises SamplingError when the pool has fewer than two entities, since
    exclusion then leaves nothing to draw.
    """
    if mode not in CORRUPTION_MODES:
        raise ConfigError(f"unknown corruption mode {mode!r}; expected one of {CORRUPTION_MODES}")
    if per_positive < 1:
        raise ConfigError(f"per_positive must be >= 1, got {per_positive}")
    positives = as_triple_array(positives, n_entities=n_entities)
    n = positives.shape[0]
    if n == 0:
        raise SamplingError("cannot corrupt an empty batch of positives")
    total = n * per_positive

    side_is_object = rng.integers(0, 2, size=total).astype(bool)
    column = np.where(side_is_object, 2, 0)
    negatives = np.repeat(positives, per_positive, axis=0)
    rows = np.arange(total)
    originals = negatives[rows, column]

    if mode == "uniform-entities":
        if n_entities < 2:
            raise SamplingError(
                f"need at least 2 entities to corrupt, vocabulary has {n_entities}"
            )
        draws = rng.integers(0, n_entities - 1, size=total)
        # Shift past the excluded original: maps [0, E-2] onto [0, E-1] \ {orig}.
        draws += draws >= originals
        replacements = draws
    else:
        pool = np.unique(positives[:, [0, 2]].ravel())
        if pool.shape[0] < 2:
            raise SamplingError(
                f"per-batch pool has {pool.shape[0]} entities; need at least 2"
            )
        position = np.searchsorted(pool, originals)
        draws = rng.integers(0, pool.shape[0] - 1, size=total)
        draws += draws >= position
        replacements = pool[draws]

    negatives[rows, column] = replacements
    corrupted_side = column.astype(np.int8)
    for arr in (negatives, corrupted_side):
        arr.flags.writeable = False
    return CorruptionBatch(positives, negatives, corrupted_side)
