"""Few-shot detection evaluation harness.

Episode sampling, prototype-fusion inference math over precomputed
embeddings, detection ensembling and NMS, COCO-style mAP, and the weighted
challenge ranking score.
"""

from .core import (
    BBox,
    DatasetIndex,
    Detection,
    EmbeddingRecord,
    EmbeddingTable,
    GroundTruthBox,
    ProbVector,
    ValidationError,
    load_dataset,
    load_detections,
    load_embeddings,
)
from .detops import EnsembleConfig, ensemble, iou, nms
from .episodes import Episode, sample_episode
from .metrics import (
    MatchConfig,
    ScoreReport,
    average_precision,
    challenge_score,
    evaluate_detections,
    map_score,
)

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "DatasetIndex",
    "Detection",
    "EmbeddingRecord",
    "EmbeddingTable",
    "EnsembleConfig",
    "Episode",
    "GroundTruthBox",
    "MatchConfig",
    "ProbVector",
    "ScoreReport",
    "ValidationError",
    "average_precision",
    "challenge_score",
    "ensemble",
    "evaluate_detections",
    "iou",
    "load_dataset",
    "load_detections",
    "load_embeddings",
    "map_score",
    "nms",
    "sample_episode",
    "__version__",
]
