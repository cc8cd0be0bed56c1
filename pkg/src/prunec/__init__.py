"""Structural filter pruning for convolutional network graphs."""

from .cost import CostReport, count_flops, count_params
from .depgraph import ChannelClass, ChannelLocus, PruneGroup, build_groups, classify_groups, groups_to_dot
from .errors import PruneError
from .executor import measure_latency, run
from .graph import ModelGraph, Node, TensorSpec, load_model, read_model, save_model, shape_check, topo_order, write_model
from .importance import rank_classes, score_group
from .planner import PrunePlan, kept_count, plan_iterative, plan_oneshot
from .rewriter import apply_plan, plan_fingerprint
from .segmetrics import InstanceMap, compute_pq, match_instances, mean_over_classes

__version__ = "0.1.0"

__all__ = [
    "ChannelClass",
    "ChannelLocus",
    "CostReport",
    "InstanceMap",
    "ModelGraph",
    "Node",
    "PruneError",
    "PruneGroup",
    "PrunePlan",
    "TensorSpec",
    "apply_plan",
    "build_groups",
    "classify_groups",
    "compute_pq",
    "count_flops",
    "count_params",
    "groups_to_dot",
    "kept_count",
    "load_model",
    "match_instances",
    "mean_over_classes",
    "measure_latency",
    "plan_fingerprint",
    "plan_iterative",
    "plan_oneshot",
    "rank_classes",
    "read_model",
    "run",
    "save_model",
    "score_group",
    "shape_check",
    "topo_order",
    "write_model",
]
