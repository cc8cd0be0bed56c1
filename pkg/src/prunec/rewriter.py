"""Physically remove pruned channel classes from a graph."""

from __future__ import annotations

import hashlib

import numpy as np

from .depgraph import BN, CONV_IN, CONV_OUT, DENSE_IN, DENSE_OUT, PruneGroup, build_groups
from .errors import FrozenGroup, PlanGraphMismatch, Unsupported, WouldEmptyGroup
from .graph import ModelGraph, dumps_canonical, validate


def plan_fingerprint(g: ModelGraph, groups: list[PruneGroup] | None = None) -> str:
    """SHA-256 over graph topology, weight shapes and the group partition."""
    if groups is None:
        groups = build_groups(g)
    doc = {
        "inputs": [[s.name, list(s.shape)] for s in g.inputs],
        "outputs": list(g.outputs),
        "nodes": [
            [
                n.id,
                n.op,
                list(n.inputs),
                list(n.outputs),
                dict(n.attrs),
                {role: list(g.weights[key].shape) for role, key in n.weights.items()},
            ]
            for n in g.nodes
        ],
        "groups": [
            [list(grp.producer_signature), grp.kind, [[list(m) for m in c.members] for c in grp.classes]]
            for grp in groups
        ],
    }
    return hashlib.sha256(dumps_canonical(doc)).hexdigest()


def _removal_map(groups: list[PruneGroup], plan) -> dict[tuple[str, str], set[int]]:
    by_id = {grp.group_id: grp for grp in groups}
    drop: dict[tuple[str, str], set[int]] = {}
    for gp in plan.groups:
        if not gp.removed:
            continue
        grp = by_id.get(gp.group_id)
        if grp is None or tuple(grp.producer_signature) != tuple(gp.producer_signature):
            raise PlanGraphMismatch(f"plan group {gp.group_id} does not exist in this graph")
        if grp.kind == "frozen":
            raise FrozenGroup(f"plan removes channels from frozen group {gp.group_id}")
        removed = set(gp.removed)
        if len(removed) != len(gp.removed) or not all(0 <= i < grp.size for i in removed):
            raise PlanGraphMismatch(f"group {gp.group_id}: removal indices out of range or repeated")
        if len(removed) >= grp.size:
            raise WouldEmptyGroup(f"group {gp.group_id}: plan removes all {grp.size} classes")
        for i in removed:
            for m in grp.classes[i].members:
                drop.setdefault((m.node, m.role), set()).add(m.index)
    return drop


def _keep(n: int, dropped: set[int] | None) -> np.ndarray:
    if not dropped:
        return np.arange(n)
    return np.array([i for i in range(n) if i not in dropped], dtype=np.intp)


def apply_plan(g: ModelGraph, plan, groups: list[PruneGroup] | None = None) -> ModelGraph:
    """Return a new graph with every removed class sliced out of its weights.

    Surviving channels keep their relative order.
    """
    if groups is None:
        groups = build_groups(g)
    if plan.fingerprint != plan_fingerprint(g, groups):
        raise PlanGraphMismatch("plan was generated for a different graph")
    drop = _removal_map(groups, plan)
    if not drop:
        return g

    weights = dict(g.weights)
    touched: dict[str, str] = {}

    def put(node_id, key, arr):
        if key in touched and touched[key] != node_id:
            raise Unsupported(f"tensor {key!r} is shared by {touched[key]!r} and {node_id!r}; cannot slice")
        touched[key] = node_id
        weights[key] = np.ascontiguousarray(arr)

    for n in g.nodes:
        if n.op == "conv2d":
            out_drop, in_drop = drop.get((n.id, CONV_OUT)), drop.get((n.id, CONV_IN))
            if not out_drop and not in_drop:
                continue
            w = g.weight(n, "weight")
            keep_o, keep_i = _keep(w.shape[0], out_drop), _keep(w.shape[1], in_drop)
            put(n.id, n.weights["weight"], w[keep_o][:, keep_i])
            if "bias" in n.weights and out_drop:
                put(n.id, n.weights["bias"], g.weight(n, "bias")[keep_o])
        elif n.op == "batchnorm2d":
            dropped = drop.get((n.id, BN))
            if not dropped:
                continue
            keep = _keep(g.weight(n, "gamma").shape[0], dropped)
            for role in ("gamma", "beta", "running_mean", "running_var"):
                put(n.id, n.weights[role], g.weight(n, role)[keep])
        elif n.op == "dense":
            out_drop, in_drop = drop.get((n.id, DENSE_OUT)), drop.get((n.id, DENSE_IN))
            if not out_drop and not in_drop:
                continue
            w = g.weight(n, "weight")
            keep_o, keep_i = _keep(w.shape[0], out_drop), _keep(w.shape[1], in_drop)
            put(n.id, n.weights["weight"], w[keep_o][:, keep_i])
            if "bias" in n.weights and out_drop:
                put(n.id, n.weights["bias"], g.weight(n, "bias")[keep_o])

    pruned = g.replace(weights=weights)
    validate(pruned)
    return pruned
