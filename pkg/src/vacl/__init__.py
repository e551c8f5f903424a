"""Variance-aware cross-layer regularization and structured channel pruning
for residual MLPs: a small float64 autodiff core, penalty functions with
analytic subgradients, a graph-rewriting pruner, and the train-prune-finetune
pipeline, exposed through an HTTP service and the ``vacl`` CLI.
"""

from .tensor import NumericError, ShapeError, Tensor
from .graph import (
    CrossLayerGroup,
    CrossLayerGroupSet,
    GraphError,
    ModelGraph,
    build_residual_mlp,
    extract_cross_layer_groups,
    partition_weights,
)
from .penalties import PenaltySpec, group_lasso, vacl, variance_aware, variance_penalty
from .pruning import PruneMask, PruneReport, filter_importance, prune, select_prunable
from .training import FinetuneConfig, StageReport, TrainConfig, finetune, pipeline, train

__version__ = "0.1.0"

__all__ = [
    "CrossLayerGroup",
    "CrossLayerGroupSet",
    "FinetuneConfig",
    "GraphError",
    "ModelGraph",
    "NumericError",
    "PenaltySpec",
    "PruneMask",
    "PruneReport",
    "ShapeError",
    "StageReport",
    "Tensor",
    "TrainConfig",
    "build_residual_mlp",
    "extract_cross_layer_groups",
    "filter_importance",
    "finetune",
    "group_lasso",
    "partition_weights",
    "pipeline",
    "prune",
    "select_prunable",
    "train",
    "vacl",
    "variance_aware",
    "variance_penalty",
]
