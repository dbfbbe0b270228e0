"""Embedding refinement and clustering by coding-rate optimization."""

from .errors import (
    ChecksumError,
    ConfigError,
    FormatError,
    NumericalError,
    RateClusterError,
    TruncationError,
    ValidationError,
)
from .rates import RateConfig, coding_length, compressed_grads, rate, rate_compressed, rate_grad, rate_reduction
from .sinkhorn import SinkhornConfig, project, project_converged, project_vjp
from .store import (
    BatchSampler,
    DatasetManifest,
    EmbeddingMatrix,
    read_embeddings,
    sample_batch,
    subsample_eval,
    write_embeddings,
)
from .captioning import caption_report, image_search, similarity_heatmap, spectrum_by_cluster, vote_caption
from .metrics import clustering_accuracy, confusion_matrix, evaluation_report, hungarian, nmi
from .selection import CodingLengthCurve, export_curve, select_k
from .spectral import ClusterAssignment, build_affinity, kmeans, spectral_cluster
from .synthetic import SubspaceSpec, gen_doubly_stochastic, gen_subspaces
from .trainer import TrainConfig, TrainState, load_checkpoint, run_training, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "BatchSampler",
    "ClusterAssignment",
    "CodingLengthCurve",
    "SubspaceSpec",
    "build_affinity",
    "caption_report",
    "clustering_accuracy",
    "confusion_matrix",
    "evaluation_report",
    "export_curve",
    "gen_doubly_stochastic",
    "gen_subspaces",
    "hungarian",
    "image_search",
    "kmeans",
    "nmi",
    "select_k",
    "similarity_heatmap",
    "spectral_cluster",
    "spectrum_by_cluster",
    "vote_caption",
    "ChecksumError",
    "ConfigError",
    "DatasetManifest",
    "EmbeddingMatrix",
    "FormatError",
    "NumericalError",
    "RateClusterError",
    "RateConfig",
    "SinkhornConfig",
    "TrainConfig",
    "TrainState",
    "TruncationError",
    "ValidationError",
    "coding_length",
    "compressed_grads",
    "load_checkpoint",
    "project",
    "project_converged",
    "project_vjp",
    "rate",
    "rate_compressed",
    "rate_grad",
    "rate_reduction",
    "read_embeddings",
    "run_training",
    "sample_batch",
    "save_checkpoint",
    "subsample_eval",
    "write_embeddings",
]
