"""Label model with embedding-space partitioning and source extension."""

from .data import (
    DiagnosticsSummary,
    EmbeddingDataset,
    EngineConfig,
    LabelVector,
    VoteMatrix,
    load_config,
    load_embeddings,
    load_labels,
    load_votes,
    store_embeddings,
    store_labels,
    store_votes,
    validate_bundle,
)
from .errors import ArgumentError, FormatError, LigerError, ShapeError, ValidationError
from .extend import ExtendedVoteMatrix, coverage_delta, extend_all, extend_source, nearest_covered_neighbor
from .label_model import LabelModel, Predictions, fit, hard_labels, posterior, predict, triplet_accuracy
from .partition import Partition, kmeans_fit, part_diameters
from .smoothness import NeighborhoodSpec, smoothness_report
from .evaluate import MetricsReport, TuneResult, compute_metrics, tune

__version__ = "0.1.0"
