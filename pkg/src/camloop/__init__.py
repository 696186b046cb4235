"""camloop: label-efficient species classification for camera-trap detections.

Pipeline: detector-output ingest -> crops -> embeddings -> linear softmax
head -> pool-based active learning loop -> metrics -> project persistence,
plus an HTTP service and CLI for the human labeling loop.
"""

__version__ = "0.1.0"

from .errors import CamloopError, DataError, UsageError
from .detections import (
    CropRecord,
    DetectionRecord,
    PixelRect,
    compute_crop_rect,
    crop_id_for,
    extract_crops,
    filter_detections,
    parse_detection_file,
    read_crop_manifest,
    write_crop_manifest,
)
from .embeddings import (
    EmbeddingStore,
    PrecomputedProvider,
    SyntheticProvider,
    embed_batch,
    load_store,
    save_store,
)
from .head import HeadModel, TrainConfig, TrainHistory, class_weights, load_model, predict, save_model, softmax, train
from .metrics import ConfusionMatrix, MetricsReport, confusion_matrix, metrics
from .active import (
    LearningCurve,
    PoolDataset,
    PoolState,
    QueryBatch,
    SimulationConfig,
    generate_synthetic_pool,
    select_batch,
    simulate,
)
from .project import ProjectState, load_project, save_project
from .session import ProjectSession, init_project

__all__ = [
    "__version__",
    "CamloopError", "DataError", "UsageError",
    "CropRecord", "DetectionRecord", "PixelRect", "compute_crop_rect", "crop_id_for",
    "extract_crops", "filter_detections", "parse_detection_file",
    "read_crop_manifest", "write_crop_manifest",
    "EmbeddingStore", "PrecomputedProvider", "SyntheticProvider",
    "embed_batch", "load_store", "save_store",
    "HeadModel", "TrainConfig", "TrainHistory", "class_weights",
    "load_model", "predict", "save_model", "softmax", "train",
    "ConfusionMatrix", "MetricsReport", "confusion_matrix", "metrics",
    "LearningCurve", "PoolDataset", "PoolState", "QueryBatch", "SimulationConfig",
    "generate_synthetic_pool", "select_batch", "simulate",
    "ProjectState", "load_project", "save_project",
    "ProjectSession", "init_project",
]
