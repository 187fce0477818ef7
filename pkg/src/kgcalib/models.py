"""Estimator classes wrapping the training loop, plus checkpoint I/O.

Models follow the scikit-learn convention: hyperparameters are constructor
arguments surfaced through ``get_params``/``set_params``, ``fit`` learns the
embeddings and sets trailing-underscore attributes, and ``predict`` returns
raw plausibility scores for (subject, predicate, object) id triples.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .exceptions import ConfigError
from .scoring import embedding_width, score_triples
from .training import TrainConfig, train_embeddings
from .validation import as_triple_array

CHECKPOINT_FORMAT = "kgcalib-checkpoint"
CHECKPOINT_VERSION = 1


class BaseEmbeddingModel(BaseEstimator):
    """Shared fit/predict machinery; subclasses pin the scoring function."""

    kind: str = ""

    def __init__(
        self,
        embedding_dim=100,
        negatives_per_positive=20,
        epochs=100,
        learning_rate=1e-4,
        batch_size=512,
        loss="self_adversarial",
        margin=1.0,
        adversarial_temperature=1.0,
        corruption_mode="uniform-entities",
        normalize_entities=False,
        adam_beta1=0.9,
        adam_beta2=0.999,
        adam_epsilon=1e-8,
        seed=0,
    ):
        self.embedding_dim = embedding_dim
        self.negatives_per_positive = negatives_per_positive
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.loss = loss
        self.margin = margin
        self.adversarial_temperature = adversarial_temperature
        self.corruption_mode = corruption_mode
        self.normalize_entities = normalize_entities
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.adam_epsilon = adam_epsilon
        self.seed = seed

    def _norm_order(self) -> int:
        return 2

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            embedding_dim=self.embedding_dim,
            negatives_per_positive=self.negatives_per_positive,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            loss=self.loss,
            margin=self.margin,
            adversarial_temperature=self.adversarial_temperature,
            corruption_mode=self.corruption_mode,
            normalize_entities=self.normalize_entities,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            adam_epsilon=self.adam_epsilon,
            seed=self.seed,
        )

    def fit(self, graph, on_epoch=None):
        """Train embeddings on a :class:`~kgcalib.graph.KnowledgeGraph`."""
        result = train_embeddings(
            graph, self.kind, self._train_config(), self._norm_order(), on_epoch
        )
        self.entity_emb_ = result.entity_emb
        self.relation_emb_ = result.relation_emb
        self.loss_history_ = result.loss_history
        self.epoch_wall_ms_ = result.epoch_wall_ms
        self.n_entities_ = result.entity_emb.shape[0]
        self.n_relations_ = result.relation_emb.shape[0]
        self.entity_vocab_hash_ = graph.entities.content_hash()
        self.relation_vocab_hash_ = graph.relations.content_hash()
        return self

    def _check_fitted(self):
        if not hasattr(self, "entity_emb_"):
            raise NotFittedError(
                f"{type(self).__name__} is not fitted; call fit or load a checkpoint"
            )

    def predict(self, X):
        """Raw scores for an (n, 3) id array; higher means more plausible."""
        self._check_fitted()
        triples = as_triple_array(X, self.n_entities_, self.n_relations_)
        return score_triples(
            self.kind, self.entity_emb_, self.relation_emb_, triples, self._norm_order()
        )

    def decision_function(self, X):
        return self.predict(X)

    def save(self, path):
        save_checkpoint(self, path)
        return self


class TransE(BaseEmbeddingModel):
    """Translation model: score = -||e_s + r_p - e_o||, L1 or L2 norm."""

    kind = "transe"

    def __init__(
        self,
        embedding_dim=100,
        negatives_per_positive=20,
        epochs=100,
        learning_rate=1e-4,
        batch_size=512,
        loss="self_adversarial",
        margin=1.0,
        adversarial_temperature=1.0,
        corruption_mode="uniform-entities",
        normalize_entities=False,
        adam_beta1=0.9,
        adam_beta2=0.999,
        adam_epsilon=1e-8,
        seed=0,
        norm_order=2,
    ):
        super().__init__(
            embedding_dim=embedding_dim,
            negatives_per_positive=negatives_per_positive,
            epochs=epochs,
            learning_rate=learning_rate,
            batch_size=batch_size,
            loss=loss,
            margin=margin,
            adversarial_temperature=adversarial_temperature,
            corruption_mode=corruption_mode,
            normalize_entities=normalize_entities,
            adam_beta1=adam_beta1,
            adam_beta2=adam_beta2,
            adam_epsilon=adam_epsilon,
            seed=seed,
        )
        self.norm_order = norm_order

    def _norm_order(self) -> int:
        if self.norm_order not in (1, 2):
            raise ConfigError(f"norm_order must be 1 or 2, got {self.norm_order!r}")
        return self.norm_order


class DistMult(BaseEmbeddingModel):
    """Diagonal bilinear model: score = sum_d e_s * r_p * e_o."""

    kind = "distmult"


class ComplEx(BaseEmbeddingModel):
    """Complex bilinear model; real/imaginary halves stored side by side."""

    kind = "complex"


class HolE(BaseEmbeddingModel):
    """Holographic model: subject dotted with correlation of relation and object."""

    kind = "hole"


MODEL_CLASSES = {
    "transe": TransE,
    "distmult": DistMult,
    "complex": ComplEx,
    "hole": HolE,
}


def make_model(kind: str, **params) -> BaseEmbeddingModel:
    try:
        cls = MODEL_CLASSES[kind]
    except KeyError:
        raise ConfigError(
            f"unknown model kind {kind!r}; expected one of {tuple(MODEL_CLASSES)}"
        ) from None
    return cls(**params)


def _matrix_sha256(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr, dtype="<f8").tobytes()).hexdigest()


def save_checkpoint(model: BaseEmbeddingModel, path) -> None:
    """Write embeddings to ``path`` and metadata to ``<path>.meta.json``.

    Layout: one JSON header line, then the entity matrix and the relation
    matrix as row-major little-endian float64 bytes. The sidecar carries
    vocabulary content hashes, matrix hashes, and the estimator parameters,
    so a loaded checkpoint can be validated against a dataset and reproduced.
    """
    model._check_fitted()
    path = str(path)
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "embedding_dim": int(model.embedding_dim),
        "width": int(model.entity_emb_.shape[1]),
        "n_entities": int(model.n_entities_),
        "n_relations": int(model.n_relations_),
        "seed": int(model.seed),
        "dtype": "<f8",
    }
    entity_bytes = np.ascontiguousarray(model.entity_emb_, dtype="<f8").tobytes()
    relation_bytes = np.ascontiguousarray(model.relation_emb_, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(entity_bytes)
        fh.write(relation_bytes)
    sidecar = {
        "entity_vocab_sha256": getattr(model, "entity_vocab_hash_", None),
        "relation_vocab_sha256": getattr(model, "relation_vocab_hash_", None),
        "entity_matrix_sha256": _matrix_sha256(model.entity_emb_),
        "relation_matrix_sha256": _matrix_sha256(model.relation_emb_),
        "params": model.get_params(),
        "loss_history": [float(x) for x in getattr(model, "loss_history_", [])],
    }
    with open(path + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path, graph=None) -> BaseEmbeddingModel:
    """Load a checkpoint written by :func:`save_checkpoint`.

    When ``graph`` is given, its vocabulary content hashes must match the
    sidecar; a mismatch means the ids in the checkpoint refer to different
    entities and the model must not be used with that graph.
    """
    path = str(path)
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise ConfigError(f"{path}: not a checkpoint file (bad header)") from None
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ConfigError(f"{path}: not a checkpoint file (format mismatch)")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint version {header.get('version')!r}")
        kind = header["kind"]
        width = int(header["width"])
        n_entities = int(header["n_entities"])
        n_relations = int(header["n_relations"])
        expected = embedding_width(kind, int(header["embedding_dim"]))
        if width != expected:
            raise ConfigError(
                f"{path}: width {width} inconsistent with embedding_dim "
                f"{header['embedding_dim']} for kind {kind!r}"
            )
        payload = fh.read()
    expected_bytes = (n_entities + n_relations) * width * 8
    if len(payload) != expected_bytes:
        raise ConfigError(
            f"{path}: payload is {len(payload)} bytes, expected {expected_bytes}"
        )
    flat = np.frombuffer(payload, dtype="<f8")
    entity_emb = flat[: n_entities * width].reshape(n_entities, width).copy()
    relation_emb = flat[n_entities * width :].reshape(n_relations, width).copy()

    sidecar = {}
    meta_path = path + ".meta.json"
    if os.path.exists(meta_path):
        with open(meta_path, encoding="utf-8") as fh:
            sidecar = json.load(fh)

    params = dict(sidecar.get("params", {}))
    params.setdefault("embedding_dim", int(header["embedding_dim"]))
    params.setdefault("seed", int(header["seed"]))
    model = make_model(kind, **params)
    model.entity_emb_ = entity_emb
    model.relation_emb_ = relation_emb
    model.n_entities_ = n_entities
    model.n_relations_ = n_relations
    model.loss_history_ = [float(x) for x in sidecar.get("loss_history", [])]
    model.epoch_wall_ms_ = []
    model.entity_vocab_hash_ = sidecar.get("entity_vocab_sha256")
    model.relation_vocab_hash_ = sidecar.get("relation_vocab_sha256")

    if sidecar:
        for name, attr in (
            ("entity_matrix_sha256", entity_emb),
            ("relation_matrix_sha256", relation_emb),
        ):
            recorded = sidecar.get(name)
            if recorded is not None and recorded != _matrix_sha256(attr):
                raise ConfigError(f"{path}: {name} mismatch; checkpoint is corrupt")
    if graph is not None:
        if graph.n_entities != n_entities or graph.n_relations != n_relations:
            raise ConfigError(
                f"{path}: checkpoint has {n_entities} entities / {n_relations} relations, "
                f"graph has {graph.n_entities} / {graph.n_relations}"
            )
        expected_hashes = (
            graph.entities.content_hash(),
            graph.relations.content_hash(),
        )
        recorded_hashes = (model.entity_vocab_hash_, model.relation_vocab_hash_)
        for got, want, what in zip(
            recorded_hashes, expected_hashes, ("entity", "relation")
        ):
            if got is not None and got != want:
                raise ConfigError(
                    f"{path}: {what} vocabulary hash does not match the given graph"
                )
    return model
