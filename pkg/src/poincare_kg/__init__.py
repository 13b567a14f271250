"""Poincaré-ball embeddings of concept taxonomies and downstream tangent features."""

__version__ = "0.1.0"

from .config import TrainingConfig
from .hierarchy import KnowledgeGraph, balanced_tree, extract_ancestral_subtree, is_connected, parse_edge_list
from .trainer import EmbeddingTable, train
from .evaluator import auroc, calibration_eavg, mean_rank, run_sweep

__all__ = [
    "TrainingConfig",
    "KnowledgeGraph",
    "EmbeddingTable",
    "parse_edge_list",
    "extract_ancestral_subtree",
    "is_connected",
    "balanced_tree",
    "train",
    "mean_rank",
    "run_sweep",
    "auroc",
    "calibration_eavg",
]
