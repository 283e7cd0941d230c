"""Transfer source selection for sequence labeling.

Computes corpus- and model-based similarity measures between datasets,
runs transfer experiments with a small built-in tagger, learns to
predict transfer gain from those observations, and selects source
subsets expected to help a given target.
"""

from .corpus import Dataset, Token, load_manifest, parse_conll
from .errors import (
    ConfigError,
    DependencyError,
    MissingObservationError,
    ParseError,
    PipelineError,
)
from .evalrank import Ranking, Score, best_rank_rho, micro_f1, ndcg, rrf, token_accuracy
from .measures import ALL_MEASURES, DistanceRecord, distance_matrix
from .predict import GainPredictor, HyperParams, classify_gain, fit, select_set
from .tagger import TaggerModel, TrainConfig, train
from .transfer import ExperimentPlan, TransferObservation, TransferRunner

__version__ = "0.1.0"

__all__ = [
    "ALL_MEASURES",
    "ConfigError",
    "Dataset",
    "DependencyError",
    "DistanceRecord",
    "ExperimentPlan",
    "GainPredictor",
    "HyperParams",
    "MissingObservationError",
    "ParseError",
    "PipelineError",
    "Ranking",
    "Score",
    "TaggerModel",
    "Token",
    "TrainConfig",
    "TransferObservation",
    "TransferRunner",
    "best_rank_rho",
    "classify_gain",
    "distance_matrix",
    "fit",
    "load_manifest",
    "micro_f1",
    "ndcg",
    "parse_conll",
    "rrf",
    "select_set",
    "token_accuracy",
    "train",
    "__version__",
]
