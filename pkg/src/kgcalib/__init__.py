"""Knowledge graph embeddings with calibrated probability outputs.

Train TransE / DistMult / ComplEx / HolE embedding models on triple data,
turn their raw scores into probabilities via logistic or isotonic
calibration (optionally from synthetic negatives with base-rate-preserving
class weights), and evaluate calibration quality, entity ranking, and triple
classification.
"""

from .calibration import (
    CALIBRATION_METHODS,
    CALIBRATION_STRATEGIES,
    CalibrationSample,
    CalibrationWeights,
    IsotonicCalibrator,
    PlattCalibrator,
    build_calibration_sample,
    calibrate,
    calibration_weights,
    load_calibrator,
    make_calibrator,
    save_calibrator,
)
from .exceptions import (
    ConfigError,
    ConvergenceError,
    DivergenceError,
    FitError,
    KGCalibError,
    ParseError,
    SamplingError,
    StageError,
    VocabularyError,
)
from .graph import (
    DatasetSplits,
    FilterIndex,
    KnowledgeGraph,
    LabeledTriple,
    LabeledTriples,
    Triple,
    Vocabulary,
    build_filter_index,
    ingest_triples,
    load_splits,
    triples_content_hash,
)
from .losses import LOSS_KINDS, compute_loss
from .metrics import (
    ClassificationResult,
    RankReport,
    ReliabilityDiagram,
    ThresholdTable,
    TIE_POLICIES,
    accuracy,
    brier_score,
    classify,
    learn_thresholds,
    load_thresholds,
    log_loss,
    ranked_eval,
    reliability_bins,
    save_thresholds,
    write_reliability_csv,
)
from .models import (
    MODEL_CLASSES,
    BaseEmbeddingModel,
    ComplEx,
    DistMult,
    HolE,
    TransE,
    load_checkpoint,
    make_model,
    save_checkpoint,
)
from .sampling import CORRUPTION_MODES, CorruptionBatch, sample_corruptions
from .scoring import MODEL_KINDS, init_embeddings, score_triples
from .training import RowAdam, TrainConfig, TrainResult, train_embeddings

__version__ = "0.1.0"

__all__ = [
    "BaseEmbeddingModel",
    "CALIBRATION_METHODS",
    "CALIBRATION_STRATEGIES",
    "CORRUPTION_MODES",
    "CalibrationSample",
    "CalibrationWeights",
    "ClassificationResult",
    "ComplEx",
    "ConfigError",
    "ConvergenceError",
    "CorruptionBatch",
    "DatasetSplits",
    "DistMult",
    "DivergenceError",
    "FilterIndex",
    "FitError",
    "HolE",
    "IsotonicCalibrator",
    "KGCalibError",
    "KnowledgeGraph",
    "LOSS_KINDS",
    "LabeledTriple",
    "LabeledTriples",
    "MODEL_CLASSES",
    "MODEL_KINDS",
    "ParseError",
    "PlattCalibrator",
    "RankReport",
    "ReliabilityDiagram",
    "RowAdam",
    "SamplingError",
    "StageError",
    "ThresholdTable",
    "TIE_POLICIES",
    "TrainConfig",
    "TrainResult",
    "TransE",
    "Triple",
    "Vocabulary",
    "VocabularyError",
    "accuracy",
    "brier_score",
    "build_calibration_sample",
    "build_filter_index",
    "calibrate",
    "calibration_weights",
    "classify",
    "compute_loss",
    "ingest_triples",
    "init_embeddings",
    "learn_thresholds",
    "load_calibrator",
    "load_checkpoint",
    "load_splits",
    "load_thresholds",
    "log_loss",
    "make_calibrator",
    "make_model",
    "ranked_eval",
    "reliability_bins",
    "sample_corruptions",
    "save_calibrator",
    "save_checkpoint",
    "save_thresholds",
    "score_triples",
    "train_embeddings",
    "triples_content_hash",
    "write_reliability_csv",
]
