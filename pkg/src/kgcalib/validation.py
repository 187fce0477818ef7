"""Input validation helpers shared by estimators, metrics, and the CLI."""

from __future__ import annotations

import numpy as np

from .exceptions import ConfigError


def as_float_array(x, name="array"):
    """Coerce to a 1-D float64 array, rejecting non-finite values."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_label_array(y, name="labels"):
    """Coerce labels to a 1-D boolean array.

    Accepts booleans, {0, 1}, or {-1, 1} integer encodings.
    """
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    if arr.dtype == bool:
        return arr.copy()
    values = set(np.unique(arr).tolist())
    if values <= {0, 1} or values <= {0.0, 1.0}:
        return arr.astype(bool)
    if values <= {-1, 1} or values <= {-1.0, 1.0}:
        return arr > 0
    raise ValueError(f"{name} must be boolean, 0/1, or -1/1; got values {sorted(values)[:8]}")


def as_weight_array(w, n, name="sample_weight"):
    """Validate sample weights: 1-D, length n, finite, strictly positive."""
    if w is None:
        return np.ones(n, dtype=np.float64)
    arr = as_float_array(w, name)
    if arr.shape[0] != n:
        raise ValueError(f"{name} has length {arr.shape[0]}, expected {n}")
    if np.any(arr <= 0):
        raise ValueError(f"{name} must be strictly positive")
    return arr


def as_probability_array(p, name="probabilities"):
    arr = as_float_array(p, name)
    if np.any(arr < 0) or np.any(arr > 1):
        raise ValueError(f"{name} must lie in [0, 1]")
    return arr


def check_same_length(**named):
    lengths = {name: len(arr) for name, arr in named.items()}
    if len(set(lengths.values())) > 1:
        raise ValueError(f"length mismatch: {lengths}")


def as_triple_array(X, n_entities=None, n_relations=None):
    """Coerce to an (n, 3) int64 array of (subject, predicate, object) ids.

    Accepts anything with a ``triples`` attribute (knowledge graphs, labeled
    triple sets) or an array-like. Id ranges are checked when vocabulary sizes
    are given; out-of-range ids raise IndexError before they can silently
    index the wrong embedding row.
    """
    if hasattr(X, "triples"):
        X = X.triples
    arr = np.asarray(X)
    if arr.ndim == 1 and arr.shape == (3,):
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) triple array, got shape {arr.shape}")
    if arr.dtype.kind not in "iu":
        if arr.dtype.kind == "f" and np.all(arr == np.floor(arr)):
            arr = arr.astype(np.int64)
        else:
            raise ValueError("triple ids must be integers")
    arr = np.ascontiguousarray(arr, dtype=np.int64)
    if arr.size and arr.min() < 0:
        raise IndexError("triple ids must be non-negative")
    if n_entities is not None and arr.size:
        ent = arr[:, [0, 2]]
        if ent.max() >= n_entities:
            raise IndexError(
                f"entity id {int(ent.max())} out of range for {n_entities} entities"
            )
    if n_relations is not None and arr.size:
        if arr[:, 1].max() >= n_relations:
            raise IndexError(
                f"relation id {int(arr[:, 1].max())} out of range for {n_relations} relations"
            )
    return arr


def positive_int(value, name, minimum=1):
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def positive_float(value, name):
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}") from None
    if not np.isfinite(out) or out <= 0:
        raise ConfigError(f"{name} must be a positive finite number, got {value!r}")
    return out


def open_unit_interval(value, name):
    out = positive_float(value, name)
    if out >= 1:
        raise ConfigError(f"{name} must lie strictly between 0 and 1, got {value!r}")
    return out
