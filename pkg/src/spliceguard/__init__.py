"""Partially spliced audio: toy corpus synthesis, boundary detection and scoring."""

__version__ = "0.1.0"

from .audio import Waveform, read_wav, write_wav
from .config import RunConfig, load_config
from .corpus import (
    CorpusConfig,
    SpliceAnnotation,
    UtteranceRecord,
    build_training_pool,
    generate_toy_corpus,
    labels_from_annotation,
    read_manifest,
    sample_training_chunk,
    splice_repeat,
    splice_replace,
)
from .errors import (
    AnnotationMismatchError,
    ArgumentError,
    ConfigError,
    FormatError,
    InvariantError,
    ShapeError,
    SpliceGuardError,
    UnsupportedFormatError,
)
from .estimator import BoundaryDetector, FbankFeatures
from .features import FbankConfig, FeatureMatrix, export_features, fbank240, import_external_features
from .model import DetectorConfig, DetectorParams, average_checkpoints, detector_forward
from .pipeline import (
    InferenceConfig,
    ScoreReport,
    TrainConfig,
    compute_eer,
    detect_boundaries,
    evaluate,
    localization_metrics,
    merge_chunk_probs,
    plan_chunks,
    train,
    utterance_score,
)
