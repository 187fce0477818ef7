"""Experiment orchestration: config files, the train/calibrate/evaluate
pipeline, the base-rate sweep, the sensitivity grid, and report emission.

Configs are flat ``key = value`` text files (``#`` starts a comment) with the
same keys as :class:`ExperimentConfig` fields; command-line flags override
file values. Every stochastic stage derives its generator from the config
seed, so a (config, input files) pair reproduces every artifact number.

Artifacts land in the output directory: ``config_echo.json`` (written first,
so failed runs keep their provenance), ``training_log.jsonl``, checkpoints
under ``checkpoints/``, calibrators under ``calibrators/``,
``reliability_<tag>.csv``, ``thresholds.json``, ``classification.json``,
``ranks.json``, ``sweep.csv``/``sweep.json``, ``sensitivity.csv``/
``sensitivity.json``, and finally ``summary.json`` plus ``timing.json``
(wall-clock numbers live only in the latter, keeping ``summary.json``
deterministic).

The ``KGCALIB_OUT_ROOT`` environment variable, when set, is prepended to any
relative output directory.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import __version__
from .calibration import (
    CALIBRATION_METHODS,
    CALIBRATION_STRATEGIES,
    IsotonicCalibrator,
    PlattCalibrator,
    build_calibration_sample,
    calibrate,
    calibration_weights,
    save_calibrator,
)
from .exceptions import ConfigError, KGCalibError, SamplingError, StageError
from .graph import build_filter_index, load_splits, triples_content_hash
from .losses import LOSS_KINDS
from .metrics import (
    TIE_POLICIES,
    brier_score,
    classify,
    learn_thresholds,
    log_loss,
    ranked_eval,
    reliability_bins,
    save_thresholds,
    write_reliability_csv,
)
from .models import MODEL_CLASSES, load_checkpoint, make_model, save_checkpoint
from .sampling import CORRUPTION_MODES, sample_corruptions
from .scoring import MODEL_KINDS

OUT_ROOT_ENV = "KGCALIB_OUT_ROOT"
SCHEMA_VERSION = 1

STAGE_ORDER = ("load-data", "train", "calibrate", "evaluate", "classify", "rank-eval", "report")

_STAGE_DEPS = {
    "load-data": (),
    "train": ("load-data",),
    "calibrate": ("train",),
    "evaluate": ("calibrate",),
    "classify": ("calibrate",),
    "rank-eval": ("train",),
    "report": ("evaluate", "classify", "rank-eval"),
}

_DEFAULT_SWEEP_ALPHAS = tuple(np.round(np.linspace(0.05, 0.95, 19), 10))


def _parse_bool(text, key):
    lowered = str(text).strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {text!r}")


def _parse_int_list(text, key):
    try:
        return tuple(int(part.strip()) for part in str(text).split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated integers, got {text!r}") from None


def _parse_float_list(text, key):
    text = str(text).strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"{key}: range form is start:stop:count, got {text!r}")
        try:
            start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError:
            raise ConfigError(f"{key}: bad range {text!r}") from None
        return tuple(float(x) for x in np.linspace(start, stop, count))
    try:
        return tuple(float(part.strip()) for part in text.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated numbers, got {text!r}") from None


def _parse_str_list(text, key):
    return tuple(part.strip() for part in str(text).split(",") if part.strip())


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a pipeline run needs; see module docstring for file syntax."""

    train_path: str = ""
    valid_path: str | None = None
    test_path: str | None = None
    labeled: bool = True
    out_dir: str = "kgcalib-out"
    model: str = "transe"
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
    norm_order: int = 2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    calibration_methods: tuple = ("platt", "isotonic")
    calibration_strategies: tuple = ("ground-truth", "synthetic")
    base_rate: float = 0.5
    calibration_negatives_per_positive: int = 20
    calibration_seed: int | None = None
    calibration_filter_known: bool = False
    n_bins: int = 10
    hits_at: tuple = (1, 3, 10)
    tie_policy: str = "pessimistic"
    ranking_filtered: bool = True
    reuse_checkpoint: bool = True
    sweep_alphas: tuple = _DEFAULT_SWEEP_ALPHAS
    sweep_pool_factor: int = 10
    sweep_seed: int | None = None
    sensitivity_etas: tuple = (2, 10, 20)
    sensitivity_dims: tuple = (8, 32)

    def validated(self) -> "ExperimentConfig":
        if not self.train_path:
            raise ConfigError("train_path is required")
        for label, path in (
            ("train_path", self.train_path),
            ("valid_path", self.valid_path),
            ("test_path", self.test_path),
        ):
            if path is not None and path != "" and not os.path.exists(path):
                raise ConfigError(f"{label}: no such file: {path}")
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if self.corruption_mode not in CORRUPTION_MODES:
            raise ConfigError(
                f"corruption_mode must be one of {CORRUPTION_MODES}, got {self.corruption_mode!r}"
            )
        if self.tie_policy not in TIE_POLICIES:
            raise ConfigError(
                f"tie_policy must be one of {TIE_POLICIES}, got {self.tie_policy!r}"
            )
        for method in self.calibration_methods:
            if method not in CALIBRATION_METHODS:
                raise ConfigError(f"unknown calibration method {method!r}")
        for strategy in self.calibration_strategies:
            if strategy not in CALIBRATION_STRATEGIES:
                raise ConfigError(f"unknown calibration strategy {strategy!r}")
        if not self.calibration_methods:
            raise ConfigError("at least one calibration method is required")
        if not 0.0 < self.base_rate < 1.0:
            raise ConfigError(f"base_rate must lie in (0, 1), got {self.base_rate}")
        for alpha in self.sweep_alphas:
            if not 0.0 < alpha < 1.0:
                raise ConfigError(f"sweep alphas must lie in (0, 1), got {alpha}")
        if self.sweep_pool_factor < 1:
            raise ConfigError(f"sweep_pool_factor must be >= 1, got {self.sweep_pool_factor}")
        return self

    def resolved_out_dir(self) -> str:
        root = os.environ.get(OUT_ROOT_ENV, "")
        if root and not os.path.isabs(self.out_dir):
            return os.path.join(root, self.out_dir)
        return self.out_dir

    def echo_dict(self, include_out_dir: bool = True) -> dict:
        echo = asdict(self)
        for key in ("calibration_methods", "calibration_strategies", "hits_at",
                    "sweep_alphas", "sensitivity_etas", "sensitivity_dims"):
            echo[key] = list(echo[key])
        if not include_out_dir:
            echo.pop("out_dir")
        echo["package_version"] = __version__
        return echo

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ExperimentConfig":
        """Build a config from string-valued key/value pairs, with coercion."""
        known = {f.name: f for f in fields(cls)}
        values = {}
        for key, raw in mapping.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = _coerce_config_value(key, raw, cls)
        return cls(**values)


_BOOL_KEYS = {"labeled", "normalize_entities", "calibration_filter_known",
              "ranking_filtered", "reuse_checkpoint"}
_INT_KEYS = {"embedding_dim", "negatives_per_positive", "epochs", "batch_size",
             "norm_order", "seed", "calibration_negatives_per_positive",
             "calibration_seed", "n_bins", "sweep_pool_factor", "sweep_seed"}
_FLOAT_KEYS = {"learning_rate", "margin", "adversarial_temperature", "adam_beta1",
               "adam_beta2", "adam_epsilon", "base_rate"}
_INT_LIST_KEYS = {"hits_at", "sensitivity_etas", "sensitivity_dims"}
_FLOAT_LIST_KEYS = {"sweep_alphas"}
_STR_LIST_KEYS = {"calibration_methods", "calibration_strategies"}


def _coerce_config_value(key, raw, cls=ExperimentConfig):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if text.lower() in ("none", "null", ""):
        return None
    if key in _BOOL_KEYS:
        return _parse_bool(text, key)
    if key in _INT_KEYS:
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {text!r}") from None
    if key in _FLOAT_KEYS:
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {text!r}") from None
    if key in _INT_LIST_KEYS:
        return _parse_int_list(text, key)
    if key in _FLOAT_LIST_KEYS:
        return _parse_float_list(text, key)
    if key in _STR_LIST_KEYS:
        return _parse_str_list(text, key)
    return text


def parse_config_file(path) -> dict:
    """Parse a flat ``key = value`` config file into a string mapping."""
    mapping = {}
    path = str(path)
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value', got {line.rstrip()!r}")
            key, _, value = stripped.partition("=")
            mapping[key.strip()] = value.strip()
    return mapping


def load_config(path=None, overrides=None) -> ExperimentConfig:
    """Config from an optional file plus ``key=value`` override strings."""
    mapping = parse_config_file(path) if path else {}
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, _, value = item.partition("=")
        mapping[key.strip()] = value.strip()
    return ExperimentConfig.from_mapping(mapping)


def _jsonify(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonify(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _write_json(path, payload) -> None:
    with open(str(path), "w", encoding="utf-8") as fh:
        json.dump(_jsonify(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


@contextlib.contextmanager
def _stage(name, timing):
    started = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc
    finally:
        timing[name] = (time.perf_counter() - started) * 1000.0


@dataclass
class ReportBundle:
    """Everything a pipeline run produced; ``summary_dict`` is the stable part."""

    config_echo: dict
    out_dir: str
    dataset: dict = field(default_factory=dict)
    model_info: dict = field(default_factory=dict)
    calibration: dict = field(default_factory=dict)
    evaluation: dict = field(default_factory=dict)
    classification: dict = field(default_factory=dict)
    ranking: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    timing_ms: dict = field(default_factory=dict)
    calibrators: dict = field(default_factory=dict)
    rank_report: object = None
    model: object = None
    splits: object = None
    checkpoint_path: str = ""

    def summary_dict(self) -> dict:
        echo = dict(self.config_echo)
        echo.pop("out_dir", None)  # runs differing only in destination stay comparable
        return {
            "schema_version": SCHEMA_VERSION,
            "package_version": __version__,
            "config": echo,
            "dataset": self.dataset,
            "model": self.model_info,
            "calibration": self.calibration,
            "evaluation": self.evaluation,
            "classification": self.classification,
            "ranking": self.ranking,
            "notes": list(self.notes),
        }


def _expand_stages(requested) -> set:
    wanted = set()
    queue = list(requested)
    while queue:
        stage = queue.pop()
        if stage not in _STAGE_DEPS:
            raise ConfigError(f"unknown stage {stage!r}; expected one of {STAGE_ORDER}")
        if stage in wanted:
            continue
        wanted.add(stage)
        queue.extend(_STAGE_DEPS[stage])
    return wanted


def _training_params(config: ExperimentConfig) -> dict:
    params = {
        "embedding_dim": config.embedding_dim,
        "negatives_per_positive": config.negatives_per_positive,
        "epochs": config.epochs,
        "learning_rate": config.learning_rate,
        "batch_size": config.batch_size,
        "loss": config.loss,
        "margin": config.margin,
        "adversarial_temperature": config.adversarial_temperature,
        "corruption_mode": config.corruption_mode,
        "normalize_entities": config.normalize_entities,
        "adam_beta1": config.adam_beta1,
        "adam_beta2": config.adam_beta2,
        "adam_epsilon": config.adam_epsilon,
        "seed": config.seed,
    }
    if config.model == "transe":
        params["norm_order"] = config.norm_order
    return params


def _checkpoint_key(config: ExperimentConfig, splits) -> str:
    payload = {
        "kind": config.model,
        "params": _training_params(config),
        "train_hash": triples_content_hash(splits.train.triples),
        "entity_vocab": splits.train.entities.content_hash(),
        "relation_vocab": splits.train.relations.content_hash(),
    }
    blob = json.dumps(_jsonify(payload), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _train_or_load(config: ExperimentConfig, splits, out_dir: Path, notes: list):
    """Train the configured model, or reuse a content-addressed checkpoint."""
    checkpoint_dir = out_dir / "checkpoints"
    checkpoint_dir.mkdir(parents=True, exist_ok=True)
    key = _checkpoint_key(config, splits)
    checkpoint_path = checkpoint_dir / f"{config.model}-{key[:16]}.ckpt"
    if config.reuse_checkpoint and checkpoint_path.exists():
        model = load_checkpoint(checkpoint_path, graph=splits.train)
        notes.append(f"reused checkpoint {checkpoint_path.name}")
        return model, str(checkpoint_path)

    model = make_model(config.model, **_training_params(config))
    log_path = out_dir / "training_log.jsonl"
    with open(log_path, "w", encoding="utf-8") as log:

        def on_epoch(epoch, mean_loss, wall_ms):
            log.write(
                json.dumps(
                    {"epoch": int(epoch), "mean_loss": float(mean_loss), "wall_ms": float(wall_ms)}
                )
                + "\n"
            )

        model.fit(splits.train, on_epoch=on_epoch)
    save_checkpoint(model, checkpoint_path)
    return model, str(checkpoint_path)


def _calibrator_tag(strategy: str, method: str) -> str:
    return f"{strategy}-{method}"


def run_pipeline(config: ExperimentConfig, stages=("report",)) -> ReportBundle:
    """Run the requested stages (plus dependencies) and emit their artifacts.

    ``stages`` names the stages to reach, usually a single endpoint like
    ``("report",)``. Any failure aborts with a :class:`StageError` naming the
    stage; artifacts written before the failure are left in place.
    """
    config = config.validated()
    wanted = _expand_stages(stages)
    out_dir = Path(config.resolved_out_dir())
    out_dir.mkdir(parents=True, exist_ok=True)

    bundle = ReportBundle(config_echo=config.echo_dict(), out_dir=str(out_dir))
    _write_json(out_dir / "config_echo.json", bundle.config_echo)
    timing = bundle.timing_ms
    notes = bundle.notes

    with _stage("load-data", timing):
        splits = load_splits(
            config.train_path, config.valid_path, config.test_path, labeled=config.labeled
        )
        bundle.splits = splits
        bundle.dataset = {
            "n_entities": splits.train.n_entities,
            "n_relations": splits.train.n_relations,
            "n_train": len(splits.train),
            "n_valid": len(splits.valid) if splits.valid is not None else 0,
            "n_valid_positives": int(splits.valid.labels.sum()) if splits.valid is not None else 0,
            "n_test": len(splits.test) if splits.test is not None else 0,
            "n_test_positives": int(splits.test.labels.sum()) if splits.test is not None else 0,
            "train_hash": triples_content_hash(splits.train.triples),
        }

    if "train" in wanted:
        with _stage("train", timing):
            model, checkpoint_path = _train_or_load(config, splits, out_dir, notes)
            bundle.model = model
            bundle.checkpoint_path = checkpoint_path
            bundle.model_info = {
                "kind": config.model,
                "embedding_dim": config.embedding_dim,
                "loss": config.loss,
                "n_epochs": config.epochs,
                "final_mean_loss": (
                    float(model.loss_history_[-1]) if model.loss_history_ else None
                ),
                "checkpoint": os.path.basename(checkpoint_path),
            }

    if "calibrate" in wanted:
        with _stage("calibrate", timing):
            _run_calibrate_stage(config, splits, bundle, out_dir)

    if "evaluate" in wanted:
        with _stage("evaluate", timing):
            _run_evaluate_stage(config, splits, bundle, out_dir)

    if "classify" in wanted:
        with _stage("classify", timing):
            _run_classify_stage(config, splits, bundle, out_dir)

    if "rank-eval" in wanted:
        with _stage("rank-eval", timing):
            _run_ranking_stage(config, splits, bundle, out_dir)

    if "report" in wanted:
        with _stage("report", timing):
            _write_json(out_dir / "summary.json", bundle.summary_dict())
        _write_json(out_dir / "timing.json", {"stage_wall_ms": timing})

    return bundle


def _run_calibrate_stage(config, splits, bundle, out_dir: Path):
    if splits.valid is None:
        raise ConfigError("calibration requires a validation split (valid_path)")
    model = bundle.model
    calibrator_dir = out_dir / "calibrators"
    calibrator_dir.mkdir(parents=True, exist_ok=True)
    has_negatives = bool((~splits.valid.labels).any())
    calibration_seed = (
        config.calibration_seed if config.calibration_seed is not None else config.seed
    )
    filter_index = None
    if config.calibration_filter_known:
        filter_index = build_filter_index(splits.train, splits.valid, splits.test)

    for strategy in config.calibration_strategies:
        if strategy == "ground-truth" and not has_negatives:
            bundle.notes.append(
                "skipped ground-truth calibration: validation split has no negatives"
            )
            continue
        for method in config.calibration_methods:
            tag = _calibrator_tag(strategy, method)
            calibrator = calibrate(
                model,
                splits.valid,
                method=method,
                strategy=strategy,
                base_rate=config.base_rate,
                negatives_per_positive=config.calibration_negatives_per_positive,
                seed=calibration_seed,
                filter_index=filter_index,
            )
            save_calibrator(calibrator, calibrator_dir / f"{tag}.json")
            bundle.calibrators[tag] = calibrator
            info = {
                "method": method,
                "strategy": strategy,
                "degenerate": bool(getattr(calibrator, "degenerate_", False)),
            }
            meta = calibrator.strategy_meta_
            if strategy == "synthetic":
                weights = calibration_weights(
                    config.base_rate, config.calibration_negatives_per_positive
                )
                info.update(
                    base_rate=weights.base_rate,
                    negatives_per_positive=weights.negatives_per_positive,
                    positive_weight=weights.positive_weight,
                    negative_weight=weights.negative_weight,
                    n_filtered_out=meta.get("n_filtered_out", 0),
                )
            else:
                info.update(
                    n_positives=meta.get("n_positives"),
                    n_negatives=meta.get("n_negatives"),
                )
            if method == "platt":
                info["slope"] = float(calibrator.slope_)
                info["intercept"] = float(calibrator.intercept_)
                info["n_iter"] = calibrator.n_iter_
            else:
                info["n_breakpoints"] = int(calibrator.breakpoints_.shape[0])
            bundle.calibration[tag] = info
    if not bundle.calibrators:
        bundle.notes.append("no calibrators were fitted")


def _run_evaluate_stage(config, splits, bundle, out_dir: Path):
    if splits.test is None:
        raise ConfigError("evaluation requires a test split (test_path)")
    model = bundle.model
    test_scores = model.predict(splits.test.triples)
    labels = splits.test.labels
    if labels.all():
        bundle.notes.append("test split has no negatives; calibration metrics are one-sided")

    predictions = {"uncalibrated": expit(test_scores)}
    for tag, calibrator in bundle.calibrators.items():
        predictions[tag] = calibrator.predict(test_scores)

    for tag, probs in predictions.items():
        diagram = reliability_bins(probs, labels, config.n_bins)
        write_reliability_csv(diagram, out_dir / f"reliability_{tag}.csv")
        bundle.evaluation[tag] = {
            "brier": brier_score(probs, labels),
            "log_loss": log_loss(probs, labels),
            "reliability_max_gap": diagram.max_gap(),
            "n_bins": config.n_bins,
        }
    _write_json(out_dir / "evaluation.json", bundle.evaluation)


def _run_classify_stage(config, splits, bundle, out_dir: Path):
    if splits.test is None:
        raise ConfigError("classification requires a test split (test_path)")
    if splits.valid is None:
        raise ConfigError("classification requires a validation split to learn thresholds")
    model = bundle.model
    test_scores = model.predict(splits.test.triples)
    test_labels = splits.test.labels
    test_relations = splits.test.triples[:, 1]
    result = {}

    if bool((~splits.valid.labels).any()):
        valid_scores = model.predict(splits.valid.triples)
        table = learn_thresholds(
            valid_scores, splits.valid.labels, splits.valid.triples[:, 1]
        )
        save_thresholds(table, out_dir / "thresholds.json")
        classified = classify(test_scores, test_relations, table, test_labels)
        result["thresholded_raw"] = {
            "accuracy": classified.accuracy,
            "n_relation_thresholds": len(table.thresholds),
            "fallback_relations": classified.fallback_relations,
        }
    else:
        bundle.notes.append(
            "skipped threshold learning: validation split has no negatives"
        )

    fixed = {}
    probs_by_tag = {"uncalibrated": expit(test_scores)}
    for tag, calibrator in bundle.calibrators.items():
        probs_by_tag[tag] = calibrator.predict(test_scores)
    for tag, probs in probs_by_tag.items():
        fixed[tag] = classify(probs, test_relations, 0.5, test_labels).accuracy
    result["fixed_half"] = fixed
    bundle.classification = result
    _write_json(out_dir / "classification.json", result)


def _run_ranking_stage(config, splits, bundle, out_dir: Path):
    if splits.test is None:
        raise ConfigError("ranking requires a test split (test_path)")
    positives = splits.test.positives
    if positives.shape[0] == 0:
        raise ConfigError("ranking requires positive test triples")
    filter_index = None
    if config.ranking_filtered:
        filter_index = build_filter_index(splits.train, splits.valid, splits.test)
    report = ranked_eval(
        bundle.model,
        positives,
        splits.train.n_entities,
        hits_at=config.hits_at,
        filter_index=filter_index,
        tie_policy=config.tie_policy,
    )
    bundle.rank_report = report
    bundle.ranking = {
        "mean_rank": report.mean_rank,
        "mean_reciprocal_rank": report.mean_reciprocal_rank,
        "hits_at": {str(k): v for k, v in report.hits_at.items()},
        "mode": report.mode,
        "tie_policy": report.tie_policy,
        "n_ranks": report.n_ranks,
    }
    _write_json(out_dir / "ranks.json", report.to_dict())


def _closed_world_pool(splits, pool_factor: int, seed: int):
    """Candidate negatives: corruptions of test positives absent from every split."""
    positives = splits.test.positives
    known = build_filter_index(
        splits.train.triples,
        splits.valid.triples if splits.valid is not None else None,
        splits.test.triples,
    )
    rng = np.random.default_rng([seed, 4])
    batch = sample_corruptions(
        positives, pool_factor, splits.train.n_entities, rng
    )
    pool = np.unique(batch.negatives, axis=0)
    keep = ~known.contains_mask(pool)
    pool = pool[keep]
    if pool.shape[0] == 0:
        raise SamplingError("closed-world negative pool is empty after rejection")
    return pool


def run_base_rate_sweep(config: ExperimentConfig, alphas=None, stages_bundle=None):
    """Evaluate calibration across assumed base rates.

    For each alpha: refit both calibrators on the same synthetic validation
    sample with weights for that alpha, build a test set whose positive rate
    is alpha using closed-world pool negatives, and score four predictors:
    platt, isotonic, uncalibrated (plain sigmoid of the raw score), and the
    constant-alpha baseline. Returns one row of metrics per alpha; rows only
    depend on their own alpha, so permuting the list permutes rows unchanged.
    """
    config = config.validated()
    alphas = tuple(float(a) for a in (alphas if alphas is not None else config.sweep_alphas))
    for alpha in alphas:
        if not 0.0 < alpha < 1.0:
            raise ConfigError(f"sweep alpha must lie in (0, 1), got {alpha}")
    if stages_bundle is None:
        stages_bundle = run_pipeline(config, stages=("train",))
    splits = stages_bundle.splits
    model = stages_bundle.model
    out_dir = Path(stages_bundle.out_dir)
    if splits.valid is None:
        raise StageError("sweep-base-rate", ConfigError("sweep requires a validation split"))
    if splits.test is None or splits.test.positives.shape[0] == 0:
        raise StageError(
            "sweep-base-rate", ConfigError("sweep requires positive test triples")
        )

    with _stage("sweep-base-rate", stages_bundle.timing_ms):
        sweep_seed = config.sweep_seed if config.sweep_seed is not None else config.seed
        calibration_seed = (
            config.calibration_seed if config.calibration_seed is not None else config.seed
        )
        # The synthetic calibration sample is alpha-free; only weights change.
        sample = build_calibration_sample(
            model.predict,
            splits.valid,
            "synthetic",
            base_rate=0.5,
            negatives_per_positive=config.calibration_negatives_per_positive,
            seed=calibration_seed,
        )
        positives = splits.test.positives
        n_pos = positives.shape[0]
        pool = _closed_world_pool(splits, config.sweep_pool_factor, sweep_seed)
        pool_scores = np.asarray(model.predict(pool), dtype=np.float64)
        positive_scores = np.asarray(model.predict(positives), dtype=np.float64)

        rows = []
        for alpha in alphas:
            weights = calibration_weights(
                alpha, config.calibration_negatives_per_positive
            )
            sample_weight = np.where(
                sample.labels, weights.positive_weight, weights.negative_weight
            )
            platt = PlattCalibrator().fit(sample.scores, sample.labels, sample_weight)
            isotonic = IsotonicCalibrator().fit(sample.scores, sample.labels, sample_weight)

            n_neg = int(round(n_pos * (1.0 - alpha) / alpha))
            rng = np.random.default_rng([sweep_seed, 3, int(round(alpha * 10000))])
            if n_neg > 0:
                chosen = rng.choice(
                    pool_scores.shape[0], size=n_neg, replace=n_neg > pool_scores.shape[0]
                )
                negative_scores = pool_scores[chosen]
            else:
                negative_scores = np.empty(0, dtype=np.float64)
            eval_scores = np.concatenate([positive_scores, negative_scores])
            eval_labels = np.concatenate(
                [np.ones(n_pos, dtype=bool), np.zeros(n_neg, dtype=bool)]
            )
            predictions = {
                "platt": platt.predict(eval_scores),
                "isotonic": isotonic.predict(eval_scores),
                "uncalibrated": expit(eval_scores),
                "baseline": np.full(eval_scores.shape[0], alpha),
            }
            row = {
                "alpha": alpha,
                "realized_alpha": n_pos / (n_pos + n_neg),
                "n_positives": n_pos,
                "n_negatives": n_neg,
            }
            for name, probs in predictions.items():
                row[f"brier_{name}"] = brier_score(probs, eval_labels)
                row[f"log_loss_{name}"] = log_loss(probs, eval_labels)
            rows.append(row)

        _write_sweep_artifacts(rows, out_dir)
    return rows


_SWEEP_COLUMNS = (
    "alpha", "realized_alpha", "n_positives", "n_negatives",
    "brier_platt", "brier_isotonic", "brier_uncalibrated", "brier_baseline",
    "log_loss_platt", "log_loss_isotonic", "log_loss_uncalibrated", "log_loss_baseline",
)


def _write_sweep_artifacts(rows, out_dir: Path):
    lines = [",".join(_SWEEP_COLUMNS)]
    for row in rows:
        lines.append(",".join(_format_csv_value(row.get(col)) for col in _SWEEP_COLUMNS))
    (out_dir / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_json(out_dir / "sweep.json", {"schema_version": SCHEMA_VERSION, "rows": rows})


def _format_csv_value(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def _dedup_preserving_order(values):
    seen = set()
    out = []
    for v in values:
        if v not in seen:
            seen.add(v)
            out.append(v)
    return out


def run_sensitivity(config: ExperimentConfig, etas=None, dims=None):
    """Brier score over a (training negatives ratio) x (embedding dim) grid.

    Each cell trains its own model (checkpoint cache applies) and calibrates
    with the first feasible configured strategy. Cell failures are recorded
    in the row's ``error`` column and the sweep continues.
    """
    config = config.validated()
    etas = _dedup_preserving_order(
        int(e) for e in (etas if etas is not None else config.sensitivity_etas)
    )
    dims = _dedup_preserving_order(
        int(k) for k in (dims if dims is not None else config.sensitivity_dims)
    )
    if not etas or not dims:
        raise ConfigError("sensitivity grids must be non-empty")

    base_bundle = run_pipeline(config, stages=("load-data",))
    splits = base_bundle.splits
    out_dir = Path(base_bundle.out_dir)
    if splits.valid is None or splits.test is None:
        raise StageError(
            "sweep-sensitivity",
            ConfigError("sensitivity sweep requires validation and test splits"),
        )
    has_gt = bool((~splits.valid.labels).any())
    # First configured strategy that is feasible on this validation split.
    strategy = "synthetic"
    for candidate in config.calibration_strategies:
        if candidate == "synthetic" or has_gt:
            strategy = candidate
            break
    calibration_seed = (
        config.calibration_seed if config.calibration_seed is not None else config.seed
    )
    test_labels = splits.test.labels

    rows = []
    with _stage("sweep-sensitivity", base_bundle.timing_ms):
        for dim in dims:
            for eta in etas:
                row = {"embedding_dim": dim, "negatives_per_positive": eta, "error": ""}
                try:
                    cell_config = replace(
                        config, embedding_dim=dim, negatives_per_positive=eta
                    )
                    model, _ = _train_or_load(cell_config, splits, out_dir, base_bundle.notes)
                    test_scores = model.predict(splits.test.triples)
                    row["brier_uncalibrated"] = brier_score(expit(test_scores), test_labels)
                    row["log_loss_uncalibrated"] = log_loss(expit(test_scores), test_labels)
                    for method in config.calibration_methods:
                        calibrator = calibrate(
                            model,
                            splits.valid,
                            method=method,
                            strategy=strategy,
                            base_rate=config.base_rate,
                            negatives_per_positive=config.calibration_negatives_per_positive,
                            seed=calibration_seed,
                        )
                        probs = calibrator.predict(test_scores)
                        row[f"brier_{method}"] = brier_score(probs, test_labels)
                        row[f"log_loss_{method}"] = log_loss(probs, test_labels)
                except KGCalibError as exc:
                    row["error"] = str(exc)
                rows.append(row)
        _write_sensitivity_artifacts(rows, out_dir, config.calibration_methods)
    return rows


def _write_sensitivity_artifacts(rows, out_dir: Path, methods):
    columns = ["embedding_dim", "negatives_per_positive"]
    for method in ("uncalibrated", *methods):
        columns.append(f"brier_{method}")
        columns.append(f"log_loss_{method}")
    columns.append("error")
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_format_csv_value(row.get(col)) for col in columns))
    (out_dir / "sensitivity.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_json(out_dir / "sensitivity.json", {"schema_version": SCHEMA_VERSION, "rows": rows})
