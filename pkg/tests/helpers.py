"""Shared test fixtures: a planted-structure graph with enumerable truth.

Entities form ``N_CLUSTERS`` clusters of ``CLUSTER_SIZE`` laid out on a
chain, and every entity belongs to one of ``N_SLOT_CLASSES`` slot classes
(its index mod 5). Relation ``rel_<d>_<j>`` is true for (s, o) exactly when
o's cluster is s's cluster shifted forward by d AND o's slot class equals
s's shifted by the relation's slot offset. Truth is therefore decidable
from labels alone, fully enumerable (3 true objects per subject-relation
pair), and exactly representable by a translation model (two lattice
directions: cluster chain and slot cycle). Uniform corruptions are almost
never latently true (~0.7%), which keeps closed-world negative pools clean.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

N_CLUSTERS = 20
CLUSTER_SIZE = 15
N_SLOT_CLASSES = 5
SHIFTS = (1, 1, 2, 2, 3, 3)  # cluster shift per relation
SLOT_OFFSETS = (0, 2, 1, 3, 4, 2)  # slot-class shift per relation
N_ENTITIES = N_CLUSTERS * CLUSTER_SIZE
N_RELATIONS = len(SHIFTS)


def entity_label(index: int) -> str:
    return f"ent_{index:03d}"


def relation_label(rel_index: int) -> str:
    return f"rel_{SHIFTS[rel_index]}_{rel_index}"


def is_true_triple(s: int, p: int, o: int) -> bool:
    if o // CLUSTER_SIZE != s // CLUSTER_SIZE + SHIFTS[p]:
        return False
    return o % N_SLOT_CLASSES == (s + SLOT_OFFSETS[p]) % N_SLOT_CLASSES


@dataclass
class PlantedDataset:
    root: str
    train_path: str
    valid_path: str
    test_path: str
    n_entities: int
    n_relations: int
    # Integer triples over the generator's own indexing
    # (entity i <-> label ent_{i:03d}, relation j <-> rel_<shift>_<j>).
    train: np.ndarray
    valid_pos: np.ndarray
    valid_neg: np.ndarray
    test_pos: np.ndarray
    test_neg: np.ndarray
    all_true: np.ndarray

    def truth_ids_for(self, entities, relations) -> np.ndarray:
        """All latently true triples mapped into a loaded vocabulary's ids."""
        ent_map = np.array(
            [entities.id_of(entity_label(i)) for i in range(self.n_entities)]
        )
        rel_map = np.array(
            [relations.id_of(relation_label(j)) for j in range(self.n_relations)]
        )
        out = self.all_true.copy()
        out[:, 0] = ent_map[self.all_true[:, 0]]
        out[:, 1] = rel_map[self.all_true[:, 1]]
        out[:, 2] = ent_map[self.all_true[:, 2]]
        return out


def _enumerate_truth() -> np.ndarray:
    rows = []
    for rel_index, shift in enumerate(SHIFTS):
        for s in range(N_ENTITIES):
            cluster = s // CLUSTER_SIZE
            target = cluster + shift
            if target >= N_CLUSTERS:
                continue
            slot_class = (s + SLOT_OFFSETS[rel_index]) % N_SLOT_CLASSES
            base = target * CLUSTER_SIZE
            for o in range(base + slot_class, base + CLUSTER_SIZE, N_SLOT_CLASSES):
                rows.append((s, rel_index, o))
    return np.asarray(rows, dtype=np.int64)


def _sample_negatives(rng, count):
    """Distinct uniformly drawn triples that are not latently true."""
    out = []
    seen = set()
    while len(out) < count:
        s = int(rng.integers(0, N_ENTITIES))
        p = int(rng.integers(0, N_RELATIONS))
        o = int(rng.integers(0, N_ENTITIES))
        if is_true_triple(s, p, o):
            continue
        key = (s, p, o)
        if key in seen:
            continue
        seen.add(key)
        out.append(key)
    return np.asarray(out, dtype=np.int64)


def _write_tsv(path, triples, labels=None):
    with open(path, "w", encoding="utf-8") as fh:
        for i, (s, p, o) in enumerate(triples):
            line = f"{entity_label(s)}\t{relation_label(p)}\t{entity_label(o)}"
            if labels is not None:
                line += f"\t{1 if labels[i] else -1}"
            fh.write(line + "\n")


def make_planted_dataset(
    root,
    seed: int = 7,
    n_train: int = 2000,
    n_valid_pos: int = 600,
    n_valid_neg: int = 600,
    n_test_pos: int = 600,
    n_test_neg: int = 600,
) -> PlantedDataset:
    """Write train/valid/test TSVs under ``root`` and return their metadata.

    Positive triples are distinct draws from the enumerated truth; negative
    triples are distinct guaranteed-false uniform draws. The splits are
    pairwise disjoint.
    """
    os.makedirs(root, exist_ok=True)
    rng = np.random.default_rng(seed)
    truth = _enumerate_truth()
    needed = n_train + n_valid_pos + n_test_pos
    if needed > truth.shape[0]:
        raise ValueError(f"fixture needs {needed} positives, truth has {truth.shape[0]}")
    order = rng.permutation(truth.shape[0])
    train = truth[order[:n_train]]
    valid_pos = truth[order[n_train : n_train + n_valid_pos]]
    test_pos = truth[order[n_train + n_valid_pos : needed]]

    negatives = _sample_negatives(rng, n_valid_neg + n_test_neg)
    valid_neg = negatives[:n_valid_neg]
    test_neg = negatives[n_valid_neg:]

    train_path = os.path.join(root, "train.tsv")
    valid_path = os.path.join(root, "valid.tsv")
    test_path = os.path.join(root, "test.tsv")
    _write_tsv(train_path, train)

    valid_triples = np.concatenate([valid_pos, valid_neg])
    valid_labels = np.concatenate(
        [np.ones(len(valid_pos), dtype=bool), np.zeros(len(valid_neg), dtype=bool)]
    )
    valid_order = rng.permutation(len(valid_triples))
    _write_tsv(valid_path, valid_triples[valid_order], valid_labels[valid_order])

    test_triples = np.concatenate([test_pos, test_neg])
    test_labels = np.concatenate(
        [np.ones(len(test_pos), dtype=bool), np.zeros(len(test_neg), dtype=bool)]
    )
    test_order = rng.permutation(len(test_triples))
    _write_tsv(test_path, test_triples[test_order], test_labels[test_order])

    return PlantedDataset(
        root=str(root),
        train_path=train_path,
        valid_path=valid_path,
        test_path=test_path,
        n_entities=N_ENTITIES,
        n_relations=N_RELATIONS,
        train=train,
        valid_pos=valid_pos,
        valid_neg=valid_neg,
        test_pos=test_pos,
        test_neg=test_neg,
        all_true=truth,
    )


def small_random_graph(seed=0, n_entities=30, n_relations=5, n_triples=60):
    """Distinct random triples plus matching vocabularies, for ranking tests."""
    from kgcalib import KnowledgeGraph, Vocabulary

    rng = np.random.default_rng(seed)
    seen = set()
    rows = []
    while len(rows) < n_triples:
        t = (
            int(rng.integers(0, n_entities)),
            int(rng.integers(0, n_relations)),
            int(rng.integers(0, n_entities)),
        )
        if t in seen:
            continue
        seen.add(t)
        rows.append(t)
    entities = Vocabulary(f"e{i}" for i in range(n_entities))
    relations = Vocabulary(f"r{i}" for i in range(n_relations))
    return KnowledgeGraph(np.asarray(rows, dtype=np.int64), entities, relations)
