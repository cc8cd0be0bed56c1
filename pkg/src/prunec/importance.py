"""Filter importance heuristics over prune groups.

By default a group is ranked through a single representative layer: its
earliest producing convolution.  In a residual chain that is the layer whose
output starts the shortcut (the stem or the 1x1 projection), so the residual
feature map rather than the convolved branch drives the ranking.  ``aggregate
="sum"`` instead sums the per-filter norms over every producer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .depgraph import BN, PRODUCER_ROLES, PruneGroup
from .errors import BadK, FrozenGroup, NoBatchNorm, UsageError
from .graph import ModelGraph

HEURISTICS = ("l1", "l2", "bn_slim")
_ALIASES = {"bn": "bn_slim", "slim": "bn_slim"}


def canonical_heuristic(name: str) -> str:
    name = _ALIASES.get(name, name)
    if name not in HEURISTICS:
        raise UsageError(f"unknown heuristic {name!r}; expected one of {HEURISTICS}")
    return name


@dataclass(frozen=True)
class ImportanceTable:
    heuristic: str
    scores: dict  # group_id -> np.ndarray aligned to class order
    representative: dict  # group_id -> node id the scores came from


def _filter_norms(g: ModelGraph, conv: str, heuristic: str) -> np.ndarray:
    w = g.weight(conv, "weight").astype(np.float64)
    b = g.weight(conv, "bias")
    flat = w.reshape(w.shape[0], -1)
    if b is not None:
        flat = np.concatenate([flat, b.astype(np.float64)[:, None]], axis=1)
    if heuristic == "l1":
        return np.abs(flat).sum(axis=1)
    return np.sqrt((flat * flat).sum(axis=1))


def _bn_carrier(g: ModelGraph, group: PruneGroup) -> str:
    """Earliest batchnorm carrying every class of the group."""
    carried: dict[str, int] = {}
    for cls in group.classes:
        for bn in {m.node for m in cls.loci(BN)}:
            carried[bn] = carried.get(bn, 0) + 1
    full = [bn for bn, count in carried.items() if count == group.size]
    if not full:
        raise NoBatchNorm(f"group {group.group_id} has no batchnorm carrying all of its channels")
    order = {n.id: i for i, n in enumerate(g.nodes)}
    return min(full, key=order.__getitem__)


def score_group(g: ModelGraph, group: PruneGroup, heuristic: str, aggregate: str = "representative") -> np.ndarray:
    """Per-class importance scores in class order."""
    heuristic = canonical_heuristic(heuristic)
    if group.kind == "frozen":
        raise FrozenGroup(f"group {group.group_id} touches model inputs/outputs and cannot be scored")
    if heuristic == "bn_slim":
        bn = _bn_carrier(g, group)
        gamma = np.abs(g.weight(bn, "gamma").astype(np.float64))
        return np.array([gamma[cls.index_in(bn, BN)] for cls in group.classes])
    if aggregate == "representative":
        convs = [group.representative]
    elif aggregate == "sum":
        convs = list(group.producer_signature)
    else:
        raise UsageError(f"unknown aggregate mode {aggregate!r}")
    scores = np.zeros(group.size)
    for conv in convs:
        norms = _filter_norms(g, conv, heuristic)
        scores += np.array([norms[cls.index_in(conv, PRODUCER_ROLES)] for cls in group.classes])
    return scores


def score_groups(g: ModelGraph, groups, heuristic: str, aggregate: str = "representative") -> ImportanceTable:
    heuristic = canonical_heuristic(heuristic)
    scores, reps = {}, {}
    for grp in groups:
        if grp.kind == "frozen":
            continue
        scores[grp.group_id] = score_group(g, grp, heuristic, aggregate)
        reps[grp.group_id] = _bn_carrier(g, grp) if heuristic == "bn_slim" else grp.representative
    return ImportanceTable(heuristic, scores, reps)


def rank_classes(scores, k_keep: int) -> tuple[list[int], list[int]]:
    """Keep the ``k_keep`` best classes; ties keep the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    n = len(scores)
    if not 1 <= k_keep <= n:
        raise BadK(f"k_keep={k_keep} outside [1, {n}]")
    # lexsort: last key is primary -> descending score, then ascending index
    order = np.lexsort((np.arange(n), -scores))
    kept = sorted(order[:k_keep].tolist())
    removed = sorted(order[k_keep:].tolist())
    return kept, removed
