"""Sparsity schedules: one-shot (optionally capped) and iterative ladders."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping

from .depgraph import PruneGroup, build_groups
from .errors import BadSchedule, BadSparsity, PlanGraphMismatch
from .graph import ModelGraph
from .importance import canonical_heuristic, rank_classes, score_group
from .rewriter import apply_plan, plan_fingerprint


def kept_count(n: int, s: float) -> int:
    """Classes that survive sparsity ``s`` out of ``n``: max(1, ceil((1-s)n))."""
    if n < 1:
        raise BadSparsity(f"group size must be >= 1, got {n}")
    if not 0 <= s < 1:
        raise BadSparsity(f"sparsity must lie in [0, 1), got {s}")
    # rounding absorbs binary noise such as (1 - 0.7) * 10 = 3.0000000000000004
    return max(1, math.ceil(round((1.0 - s) * n, 9)))


def check_sparsity(s: float, what: str = "sparsity") -> float:
    if not 0 <= s < 1:
        raise BadSparsity(f"{what} must lie in [0, 1), got {s}")
    return float(s)


@dataclass(frozen=True)
class GroupPlan:
    group_id: int
    producer_signature: tuple[str, ...]
    kind: str
    size: int
    sparsity: float
    removed: tuple[int, ...]
    scores: tuple[float, ...] | None = None

    @property
    def kept(self) -> int:
        return self.size - len(self.removed)


@dataclass(frozen=True)
class PrunePlan:
    fingerprint: str
    groups: tuple[GroupPlan, ...]
    heuristic: str
    strategy: str = "oneshot"
    target_sparsity: float = 0.0
    round: int = 0
    cap: float | None = None
    overrides: Mapping = field(default_factory=dict)

    def group(self, group_id: int) -> GroupPlan:
        for gp in self.groups:
            if gp.group_id == group_id:
                return gp
        raise KeyError(group_id)

    @property
    def is_empty(self) -> bool:
        return not any(gp.removed for gp in self.groups)

    def to_json(self) -> dict:
        d = asdict(self)
        d["overrides"] = {str(k): v for k, v in self.overrides.items()}
        for gp, gd in zip(self.groups, d["groups"]):
            gd["kept"] = gp.kept
            gd["producer_signature"] = list(gp.producer_signature)
            gd["removed"] = list(gp.removed)
            gd["scores"] = None if gp.scores is None else list(gp.scores)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "PrunePlan":
        groups = tuple(
            GroupPlan(
                group_id=gd["group_id"],
                producer_signature=tuple(gd["producer_signature"]),
                kind=gd["kind"],
                size=gd["size"],
                sparsity=gd["sparsity"],
                removed=tuple(gd["removed"]),
                scores=None if gd.get("scores") is None else tuple(gd["scores"]),
            )
            for gd in d["groups"]
        )
        return cls(
            fingerprint=d["fingerprint"],
            groups=groups,
            heuristic=d["heuristic"],
            strategy=d.get("strategy", "oneshot"),
            target_sparsity=d.get("target_sparsity", 0.0),
            round=d.get("round", 0),
            cap=d.get("cap"),
            overrides=d.get("overrides", {}),
        )


def _override_for(grp: PruneGroup, overrides: Mapping | None):
    """Overrides are keyed by group id, by the comma-joined signature, or by any producer conv id."""
    if not overrides:
        return None
    for key in (grp.group_id, str(grp.group_id), ",".join(grp.producer_signature), *grp.producer_signature):
        if key in overrides:
            return check_sparsity(float(overrides[key]), f"override for group {grp.group_id}")
    return None


def effective_sparsity(grp: PruneGroup, s: float, cap: float | None = None, overrides: Mapping | None = None) -> float:
    if grp.kind == "frozen":
        return 0.0
    override = _override_for(grp, overrides)
    s_g = s if override is None else override
    if cap is not None and grp.kind == "interdependent":
        s_g = min(s_g, cap)
    return s_g


def plan_oneshot(
    g: ModelGraph,
    groups: list[PruneGroup] | None,
    heuristic: str,
    s: float,
    cap: float | None = None,
    overrides: Mapping | None = None,
    aggregate: str = "representative",
) -> PrunePlan:
    heuristic = canonical_heuristic(heuristic)
    check_sparsity(s)
    if cap is not None:
        check_sparsity(cap, "cap")
    if groups is None:
        groups = build_groups(g)
    plans = []
    for grp in groups:
        s_g = effective_sparsity(grp, s, cap, overrides)
        keep = kept_count(grp.size, s_g)
        if grp.kind == "frozen" or keep == grp.size:
            plans.append(GroupPlan(grp.group_id, grp.producer_signature, grp.kind, grp.size, s_g, ()))
            continue
        scores = score_group(g, grp, heuristic, aggregate)
        _, removed = rank_classes(scores, keep)
        plans.append(
            GroupPlan(
                grp.group_id,
                grp.producer_signature,
                grp.kind,
                grp.size,
                s_g,
                tuple(removed),
                tuple(float(x) for x in scores),
            )
        )
    return PrunePlan(
        fingerprint=plan_fingerprint(g, groups),
        groups=tuple(plans),
        heuristic=heuristic,
        strategy="oneshot",
        target_sparsity=float(s),
        cap=cap,
        overrides=dict(overrides or {}),
    )


@dataclass(frozen=True)
class IterativeResult:
    rounds: tuple[PrunePlan, ...]
    cumulative: PrunePlan
    graphs: tuple[ModelGraph, ...]

    @property
    def graph(self) -> ModelGraph:
        return self.graphs[-1]


def ladder(step: float, rounds: int) -> list[float]:
    if rounds < 1 or step <= 0:
        raise BadSchedule(f"need step > 0 and rounds >= 1, got step={step}, rounds={rounds}")
    if step * rounds >= 1 - 1e-12:
        raise BadSchedule(f"step*rounds = {step * rounds:g} must stay below 1")
    return [round(t * step, 12) for t in range(1, rounds + 1)]


def plan_iterative(
    g: ModelGraph,
    heuristic: str,
    step: float,
    rounds: int,
    cap: float | None = None,
    recompute: bool = True,
    overrides: Mapping | None = None,
    aggregate: str = "representative",
) -> IterativeResult:
    """Cumulative ladder s_t = t*step measured against the original group sizes.

    Each round plan targets the graph produced by the previous round; the
    cumulative plan targets the original graph.  With ``recompute`` the
    importance is re-scored on the already pruned weights every round,
    otherwise the first-round scores fix the removal order.
    """
    heuristic = canonical_heuristic(heuristic)
    targets = ladder(step, rounds)
    if cap is not None:
        check_sparsity(cap, "cap")
    groups0 = build_groups(g)
    # original class indices still alive, per group signature
    alive = {grp.producer_signature: list(range(grp.size)) for grp in groups0}
    fixed = {}
    if not recompute:
        for grp in groups0:
            if grp.kind != "frozen":
                fixed[grp.producer_signature] = score_group(g, grp, heuristic, aggregate)

    plans, graphs = [], []
    cur = g
    for t, s_t in enumerate(targets, start=1):
        groups_t = build_groups(cur)
        round_plans = []
        for grp0, grp in zip(groups0, groups_t):
            sig = grp0.producer_signature
            if grp.producer_signature != sig or grp.size != len(alive[sig]):
                raise PlanGraphMismatch(f"group layout changed between rounds at {sig}")
            s_g = effective_sparsity(grp0, s_t, cap, overrides)
            keep = kept_count(grp0.size, s_g)
            if grp.kind == "frozen" or keep >= grp.size:
                round_plans.append(GroupPlan(grp.group_id, sig, grp.kind, grp.size, s_g, ()))
                continue
            if recompute:
                scores = score_group(cur, grp, heuristic, aggregate)
            else:
                scores = fixed[sig][alive[sig]]
            _, removed = rank_classes(scores, keep)
            round_plans.append(
                GroupPlan(grp.group_id, sig, grp.kind, grp.size, s_g, tuple(removed), tuple(float(x) for x in scores))
            )
            gone = set(removed)
            alive[sig] = [c for i, c in enumerate(alive[sig]) if i not in gone]
        plan = PrunePlan(
            fingerprint=plan_fingerprint(cur, groups_t),
            groups=tuple(round_plans),
            heuristic=heuristic,
            strategy="iterative",
            target_sparsity=s_t,
            round=t,
            cap=cap,
            overrides=dict(overrides or {}),
        )
        cur = apply_plan(cur, plan, groups_t)
        plans.append(plan)
        graphs.append(cur)

    cumulative_groups = []
    for grp in groups0:
        sig = grp.producer_signature
        survivors = set(alive[sig])
        removed = tuple(i for i in range(grp.size) if i not in survivors)
        cumulative_groups.append(
            GroupPlan(grp.group_id, sig, grp.kind, grp.size, effective_sparsity(grp, targets[-1], cap, overrides), removed)
        )
    cumulative = PrunePlan(
        fingerprint=plan_fingerprint(g, groups0),
        groups=tuple(cumulative_groups),
        heuristic=heuristic,
        strategy="iterative",
        target_sparsity=targets[-1],
        round=rounds,
        cap=cap,
        overrides=dict(overrides or {}),
    )
    return IterativeResult(tuple(plans), cumulative, tuple(graphs))
