"""
One-shot uniform pruning
========================

Pruning a fraction s of every group's filters shrinks parameters faster
than linearly: a convolution loses both output filters and input channels,
so its weight tensor keeps roughly (1-s)^2 of its entries.
"""

from prunec import zoo
from prunec.cost import count_params
from prunec.depgraph import build_groups
from prunec.planner import plan_oneshot
from prunec.rewriter import apply_plan

g = zoo.build_resnet18()
groups = build_groups(g)
base = count_params(g).total_params
print(f"baseline: {base / 1e6:.3f} M params")

print(f"\n{'s':>5} {'params (M)':>11} {'ratio':>7} {'1-s':>6} {'(1-s)^2':>8}")
for s in (0.1, 0.25, 0.5, 0.75, 0.9):
    pruned = apply_plan(g, plan_oneshot(g, groups, "l2", s), groups)
    p = count_params(pruned).total_params
    print(f"{s:>5.2f} {p / 1e6:>11.3f} {p / base:>7.3f} {1 - s:>6.2f} {(1 - s) ** 2:>8.3f}")

# the three heuristics pick different filters from the same group
grp = next(x for x in groups if x.kind == "local")
for h in ("l1", "l2", "bn_slim"):
    plan = plan_oneshot(g, groups, h, 0.5)
    print(f"\n{h:>7}: first removed filters of {grp.producer_signature[0]}:", plan.group(grp.group_id).removed[:8])
