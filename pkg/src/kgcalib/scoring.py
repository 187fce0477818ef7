"""Scoring functions for the four embedding model families.

Every scorer takes gathered embedding rows ``e_s, r_p, e_o`` of shape (n, d)
and returns per-triple scores of shape (n,); higher means more plausible.
``*_grad`` variants additionally return the score derivatives with respect to
each input row, shaped like the inputs, so the training loop can chain them
with loss derivatives.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ConfigError
from .validation import as_triple_array


def _check_norm_order(norm_order):
    if norm_order not in (1, 2):
        raise ConfigError(f"norm_order must be 1 or 2, got {norm_order!r}")


def translation_score(e_s, r_p, e_o, norm_order=2):
    """Negated norm of the translation residual ``e_s + r_p - e_o``."""
    _check_norm_order(norm_order)
    u = e_s + r_p - e_o
    if norm_order == 1:
        return -np.abs(u).sum(axis=1)
    return -np.sqrt((u * u).sum(axis=1))


def translation_grad(e_s, r_p, e_o, norm_order=2):
    _check_norm_order(norm_order)
    u = e_s + r_p - e_o
    if norm_order == 1:
        score = -np.abs(u).sum(axis=1)
        g = -np.sign(u)
    else:
        norm = np.sqrt((u * u).sum(axis=1))
        score = -norm
        # Subgradient 0 at the non-differentiable point u = 0.
        safe = np.where(norm > 0, norm, 1.0)
        g = -u / safe[:, None]
        g[norm == 0] = 0.0
    # d/d e_s == d/d r_p; d/d e_o is the negation.
    return score, (g, g.copy(), -g)


def trilinear_score(e_s, r_p, e_o):
    """Trilinear product score: sum_d e_s[d] * r_p[d] * e_o[d]."""
    return np.einsum("nd,nd,nd->n", e_s, r_p, e_o)


def trilinear_grad(e_s, r_p, e_o):
    score = trilinear_score(e_s, r_p, e_o)
    return score, (r_p * e_o, e_s * e_o, e_s * r_p)


def _split_complex(x):
    if x.shape[1] % 2:
        raise ValueError(f"complex rows need an even width, got {x.shape[1]}")
    k = x.shape[1] // 2
    return x[:, :k], x[:, k:]


def complex_bilinear_score(e_s, r_p, e_o):
    """Hermitian trilinear score over complex embeddings.

    Rows store the real part in columns [0, k) and the imaginary part in
    [k, 2k). The score is Re(<s, p, conj(o)>), which works out to
    ``sum (Re(s)Re(p) - Im(s)Im(p)) * Re(o) + (Re(s)Im(p) + Im(s)Re(p)) * Im(o)``.
    """
    a, b = _split_complex(e_s)
    c, d = _split_complex(r_p)
    e, f = _split_complex(e_o)
    return ((a * c - b * d) * e + (a * d + b * c) * f).sum(axis=1)


def complex_bilinear_grad(e_s, r_p, e_o):
    a, b = _split_complex(e_s)
    c, d = _split_complex(r_p)
    e, f = _split_complex(e_o)
    score = ((a * c - b * d) * e + (a * d + b * c) * f).sum(axis=1)
    g_s = np.concatenate([c * e + d * f, c * f - d * e], axis=1)
    g_p = np.concatenate([a * e + b * f, a * f - b * e], axis=1)
    g_o = np.concatenate([a * c - b * d, a * d + b * c], axis=1)
    return score, (g_s, g_p, g_o)


def circular_correlation(x, y):
    """Row-wise circular correlation: out[:, i] = sum_j x[:, j] * y[:, (i+j) % k]."""
    k = x.shape[1]
    out = np.empty_like(x)
    for shift in range(k):
        out[:, shift] = np.einsum("nj,nj->n", x, np.roll(y, -shift, axis=1))
    return out


def circular_convolution(x, y):
    """Row-wise circular convolution: out[:, m] = sum_i x[:, i] * y[:, (m-i) % k]."""
    k = x.shape[1]
    reversed_y = y[:, (k - np.arange(k)) % k]
    out = np.empty_like(x)
    for shift in range(k):
        out[:, shift] = np.einsum("nj,nj->n", x, np.roll(reversed_y, shift, axis=1))
    return out


def holographic_score(e_s, r_p, e_o):
    """Inner product of the subject with the correlation of relation and object."""
    return np.einsum("nd,nd->n", e_s, circular_correlation(r_p, e_o))


def holographic_grad(e_s, r_p, e_o):
    corr_po = circular_correlation(r_p, e_o)
    score = np.einsum("nd,nd->n", e_s, corr_po)
    g_s = corr_po
    g_p = circular_correlation(e_s, e_o)
    g_o = circular_convolution(e_s, r_p)
    return score, (g_s, g_p, g_o)


MODEL_KINDS = ("transe", "distmult", "complex", "hole")


def embedding_width(kind: str, embedding_dim: int) -> int:
    """Row width of the stored real matrices for ``embedding_dim`` components."""
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    # Complex embeddings store real and imaginary halves side by side.
    return 2 * embedding_dim if kind == "complex" else embedding_dim


def init_embeddings(kind, embedding_dim, n_entities, n_relations, seed):
    """Glorot-uniform initial embeddings: entity matrix first, then relation.

    Draw order is fixed so a (kind, dims, counts, seed) tuple fully determines
    both matrices.
    """
    if n_entities < 1:
        raise ConfigError("graph must contain at least one entity")
    if n_relations < 1:
        raise ConfigError("graph must contain at least one relation")
    if embedding_dim < 1:
        raise ConfigError(f"embedding_dim must be >= 1, got {embedding_dim}")
    width = embedding_width(kind, embedding_dim)
    bound = np.sqrt(6.0 / width)
    rng = np.random.default_rng(seed)
    entity_emb = rng.uniform(-bound, bound, size=(n_entities, width))
    relation_emb = rng.uniform(-bound, bound, size=(n_relations, width))
    return entity_emb, relation_emb


def _gather(entity_emb, relation_emb, triples):
    return entity_emb[triples[:, 0]], relation_emb[triples[:, 1]], entity_emb[triples[:, 2]]


def score_triples(kind, entity_emb, relation_emb, triples, norm_order=2):
    """Score an (n, 3) id array against embedding matrices."""
    triples = as_triple_array(triples, entity_emb.shape[0], relation_emb.shape[0])
    e_s, r_p, e_o = _gather(entity_emb, relation_emb, triples)
    if kind == "transe":
        return translation_score(e_s, r_p, e_o, norm_order)
    if kind == "distmult":
        return trilinear_score(e_s, r_p, e_o)
    if kind == "complex":
        return complex_bilinear_score(e_s, r_p, e_o)
    if kind == "hole":
        return holographic_score(e_s, r_p, e_o)
    raise ConfigError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def score_and_grad(kind, entity_emb, relation_emb, triples, norm_order=2):
    """Scores plus per-row gradients ``(d/d e_s, d/d r_p, d/d e_o)``."""
    triples = as_triple_array(triples, entity_emb.shape[0], relation_emb.shape[0])
    e_s, r_p, e_o = _gather(entity_emb, relation_emb, triples)
    if kind == "transe":
        return translation_grad(e_s, r_p, e_o, norm_order)
    if kind == "distmult":
        return trilinear_grad(e_s, r_p, e_o)
    if kind == "complex":
        return complex_bilinear_grad(e_s, r_p, e_o)
    if kind == "hole":
        return holographic_grad(e_s, r_p, e_o)
    raise ConfigError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
