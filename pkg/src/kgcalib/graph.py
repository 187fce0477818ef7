"""Triple data model: vocabularies, graphs, labeled triples, splits, filtering.

Entities and relations are interned into dense integer ids through
:class:`Vocabulary`. All downstream code works on (n, 3) int64 id arrays;
string labels only exist at the ingestion boundary.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .exceptions import ConfigError, ParseError, VocabularyError
from .validation import as_triple_array


class Triple(NamedTuple):
    subject: int
    predicate: int
    object: int


class LabeledTriple(NamedTuple):
    subject: int
    predicate: int
    object: int
    label: bool


class Vocabulary:
    """Insertion-ordered bidirectional mapping between labels and dense ids."""

    def __init__(self, labels: Iterable[str] = ()):
        self._label_to_id: dict[str, int] = {}
        self._labels: list[str] = []
        self._frozen = False
        for label in labels:
            self.add(label)

    def add(self, label: str) -> int:
        """Intern ``label``, returning its id; new labels get the next id."""
        existing = self._label_to_id.get(label)
        if existing is not None:
            return existing
        if self._frozen:
            raise VocabularyError(f"unknown label {label!r} (vocabulary is frozen)")
        idx = len(self._labels)
        self._label_to_id[label] = idx
        self._labels.append(label)
        return idx

    def id_of(self, label: str) -> int:
        try:
            return self._label_to_id[label]
        except KeyError:
            raise VocabularyError(f"unknown label {label!r}") from None

    def label_of(self, idx: int) -> str:
        return self._labels[idx]

    def freeze(self):
        """Disallow further additions; lookups of unknown labels then raise."""
        self._frozen = True
        return self

    @property
    def frozen(self) -> bool:
        return self._frozen

    def __len__(self):
        return len(self._labels)

    def __contains__(self, label):
        return label in self._label_to_id

    def __iter__(self):
        return iter(self._labels)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._labels == other._labels

    def content_hash(self) -> str:
        """SHA-256 over the ordered label list; stable across processes."""
        h = hashlib.sha256()
        for label in self._labels:
            h.update(label.encode("utf-8"))
            h.update(b"\x00")
        return h.hexdigest()


class KnowledgeGraph:
    """A set of positive triples over shared entity/relation vocabularies."""

    def __init__(self, triples, entities: Vocabulary, relations: Vocabulary):
        self.triples = as_triple_array(triples, len(entities), len(relations))
        self.entities = entities
        self.relations = relations

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def __len__(self):
        return self.triples.shape[0]

    def triple_set(self) -> set[tuple[int, int, int]]:
        return set(map(tuple, self.triples.tolist()))


class LabeledTriples:
    """Triples with boolean truth labels, e.g. a labeled validation split."""

    def __init__(self, triples, labels, entities: Vocabulary, relations: Vocabulary):
        self.triples = as_triple_array(triples, len(entities), len(relations))
        self.labels = np.asarray(labels, dtype=bool)
        if self.labels.shape != (self.triples.shape[0],):
            raise ValueError(
                f"labels shape {self.labels.shape} does not match {self.triples.shape[0]} triples"
            )
        self.entities = entities
        self.relations = relations

    def __len__(self):
        return self.triples.shape[0]

    @property
    def positives(self):
        return self.triples[self.labels]

    @property
    def negatives(self):
        return self.triples[~self.labels]

    def positive_graph(self) -> KnowledgeGraph:
        return KnowledgeGraph(self.positives, self.entities, self.relations)


@dataclass
class DatasetSplits:
    """Train graph plus optional labeled validation/test splits.

    Splits must be pairwise disjoint as triple sets; overlap would corrupt
    filtered ranking and leak training data into evaluation.
    """

    train: KnowledgeGraph
    valid: LabeledTriples | None = None
    test: LabeledTriples | None = None

    def __post_init__(self):
        named = [("train", self.train.triples)]
        if self.valid is not None:
            named.append(("valid", self.valid.triples))
        if self.test is not None:
            named.append(("test", self.test.triples))
        seen: dict[tuple[int, int, int], str] = {}
        for name, triples in named:
            current = set(map(tuple, triples.tolist()))
            for t in current:
                if t in seen and seen[t] != name:
                    raise ConfigError(
                        f"triple {t} appears in both '{seen[t]}' and '{name}' splits"
                    )
            for t in current:
                seen.setdefault(t, name)

    @property
    def entities(self) -> Vocabulary:
        return self.train.entities

    @property
    def relations(self) -> Vocabulary:
        return self.train.relations


class FilterIndex:
    """Membership index over known-positive triples.

    Backs filtered ranking (mask known positives other than the probe) and
    optional rejection of accidental positives during synthetic negative
    sampling.
    """

    def __init__(self, triples_by_source: dict[str, np.ndarray]):
        self._members: set[tuple[int, int, int]] = set()
        for arr in triples_by_source.values():
            self._members.update(map(tuple, np.asarray(arr, dtype=np.int64).tolist()))
        self._objects_by_sp: dict[tuple[int, int], np.ndarray] = {}
        self._subjects_by_po: dict[tuple[int, int], np.ndarray] = {}
        objects: dict[tuple[int, int], set[int]] = {}
        subjects: dict[tuple[int, int], set[int]] = {}
        for s, p, o in self._members:
            objects.setdefault((s, p), set()).add(o)
            subjects.setdefault((p, o), set()).add(s)
        for key, vals in objects.items():
            self._objects_by_sp[key] = np.fromiter(sorted(vals), dtype=np.int64)
        for key, vals in subjects.items():
            self._subjects_by_po[key] = np.fromiter(sorted(vals), dtype=np.int64)

    def __contains__(self, triple) -> bool:
        s, p, o = triple
        return (int(s), int(p), int(o)) in self._members

    def __len__(self):
        return len(self._members)

    def contains_mask(self, triples) -> np.ndarray:
        arr = np.asarray(triples, dtype=np.int64)
        return np.fromiter(
            (tuple(row) in self._members for row in arr.tolist()),
            dtype=bool,
            count=arr.shape[0],
        )

    def known_objects(self, subject: int, predicate: int) -> np.ndarray:
        return self._objects_by_sp.get((int(subject), int(predicate)), _EMPTY_IDS)

    def known_subjects(self, predicate: int, object: int) -> np.ndarray:
        return self._subjects_by_po.get((int(predicate), int(object)), _EMPTY_IDS)


_EMPTY_IDS = np.empty(0, dtype=np.int64)


def build_filter_index(*triple_sources) -> FilterIndex:
    """Build a :class:`FilterIndex` from graphs, labeled splits, or id arrays.

    Labeled splits contribute only their positive triples; a negative triple
    must stay eligible as a ranking corruption.
    """
    by_source = {}
    for i, source in enumerate(triple_sources):
        if source is None:
            continue
        if isinstance(source, LabeledTriples):
            arr = source.positives
        elif isinstance(source, KnowledgeGraph):
            arr = source.triples
        else:
            arr = as_triple_array(source)
        by_source[f"source_{i}"] = arr
    return FilterIndex(by_source)


def triples_content_hash(triples, labels=None) -> str:
    """SHA-256 over an id-triple array (and labels, if any); for provenance."""
    h = hashlib.sha256()
    arr = np.ascontiguousarray(np.asarray(triples, dtype=np.int64))
    h.update(arr.tobytes())
    if labels is not None:
        h.update(np.ascontiguousarray(np.asarray(labels, dtype=bool)).tobytes())
    return h.hexdigest()


def _parse_label(token: str, path, line_no) -> bool:
    if token == "1":
        return True
    if token in ("0", "-1"):
        return False
    raise ParseError(f"label must be 1, 0, or -1; got {token!r}", path, line_no)


def ingest_triples(
    path,
    fmt: str = "tsv-positive",
    entities: Vocabulary | None = None,
    relations: Vocabulary | None = None,
    on_duplicate: str = "reject",
):
    """Read a TSV triple file into a graph or labeled triple set.

    Args:
        path: file of ``subject<TAB>predicate<TAB>object`` lines, with a
            fourth ``label`` field when ``fmt="tsv-labeled"``.
        fmt: ``"tsv-positive"`` (3 columns, returns :class:`KnowledgeGraph`)
            or ``"tsv-labeled"`` (4 columns, returns :class:`LabeledTriples`).
        entities, relations: vocabularies to intern into. New ones are created
            when omitted; pass frozen vocabularies to reject unseen labels.
        on_duplicate: ``"reject"`` raises on a repeated triple, ``"dedup"``
            keeps the first occurrence and warns with a count. Repeats with
            conflicting labels always raise.

    Blank lines are skipped. Fields are stripped of surrounding whitespace;
    a stripped-empty field is a parse error.
    """
    if fmt not in ("tsv-positive", "tsv-labeled"):
        raise ConfigError(f"unknown triple format {fmt!r}")
    if on_duplicate not in ("reject", "dedup"):
        raise ConfigError(f"on_duplicate must be 'reject' or 'dedup', got {on_duplicate!r}")
    labeled = fmt == "tsv-labeled"
    n_fields = 4 if labeled else 3
    entities = entities if entities is not None else Vocabulary()
    relations = relations if relations is not None else Vocabulary()

    rows: list[tuple[int, int, int]] = []
    labels: list[bool] = []
    first_label: dict[tuple[int, int, int], bool] = {}
    n_duplicates = 0
    path = str(path)
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = [f.strip() for f in line.split("\t")]
            if len(fields) != n_fields:
                raise ParseError(
                    f"expected {n_fields} tab-separated fields, got {len(fields)}",
                    path,
                    line_no,
                )
            if any(not f for f in fields):
                raise ParseError("empty field", path, line_no)
            label = _parse_label(fields[3], path, line_no) if labeled else True
            try:
                s = entities.add(fields[0])
                p = relations.add(fields[1])
                o = entities.add(fields[2])
            except VocabularyError as exc:
                raise ParseError(str(exc.args[0]), path, line_no) from None
            key = (s, p, o)
            if key in first_label:
                if labeled and first_label[key] != label:
                    raise ParseError(
                        f"triple {fields[0]!r} {fields[1]!r} {fields[2]!r} repeated "
                        "with conflicting labels",
                        path,
                        line_no,
                    )
                if on_duplicate == "reject":
                    raise ParseError(
                        f"duplicate triple {fields[0]!r} {fields[1]!r} {fields[2]!r}",
                        path,
                        line_no,
                    )
                n_duplicates += 1
                continue
            first_label[key] = label
            rows.append(key)
            labels.append(label)

    if n_duplicates:
        warnings.warn(f"{path}: dropped {n_duplicates} duplicate triples", stacklevel=2)
    triples = np.asarray(rows, dtype=np.int64).reshape(len(rows), 3)
    if labeled:
        return LabeledTriples(triples, labels, entities, relations)
    return KnowledgeGraph(triples, entities, relations)


def load_splits(
    train_path,
    valid_path=None,
    test_path=None,
    labeled: bool = True,
    on_duplicate: str = "reject",
) -> DatasetSplits:
    """Load train (+ optional valid/test) files over one shared vocabulary.

    The vocabulary stays open across all files so evaluation entities that
    never occur in training still receive ids (their embeddings are simply
    untrained). Set ``labeled=False`` when valid/test are positive-only; they
    are then wrapped as all-true labeled sets.
    """
    entities = Vocabulary()
    relations = Vocabulary()
    train = ingest_triples(
        train_path, "tsv-positive", entities, relations, on_duplicate=on_duplicate
    )
    fmt = "tsv-labeled" if labeled else "tsv-positive"

    def _load_eval(path):
        if path is None:
            return None
        out = ingest_triples(path, fmt, entities, relations, on_duplicate=on_duplicate)
        if isinstance(out, KnowledgeGraph):
            out = LabeledTriples(
                out.triples, np.ones(len(out), dtype=bool), entities, relations
            )
        return out

    valid = _load_eval(valid_path)
    test = _load_eval(test_path)
    # Re-wrap train so its id-range checks see the final vocabulary sizes.
    train = KnowledgeGraph(train.triples, entities, relations)
    return DatasetSplits(train=train, valid=valid, test=test)
