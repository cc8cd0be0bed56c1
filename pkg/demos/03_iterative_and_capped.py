"""
Iterative ladders and capped interdependent groups
==================================================

An iterative schedule removes 5% of the original filters per round until
95% are gone.  A cap keeps interdependent (residual) groups at a milder
sparsity while local groups still follow the target.
"""

from prunec import zoo
from prunec.cost import count_params
from prunec.planner import plan_iterative, plan_oneshot
from prunec.rewriter import apply_plan

g = zoo.build_resnet18(classes=10, width_multiplier=0.5)
base = count_params(g).total_params

res = plan_iterative(g, "l1", step=0.05, rounds=19)
print("round  target  params ratio")
for t, (plan, graph) in enumerate(zip(res.rounds, res.graphs), start=1):
    if t % 3 == 1 or t == 19:
        print(f"{t:>5}  {plan.target_sparsity:>6.2f}  {count_params(graph).total_params / base:>12.4f}")

# With a fixed ranking the ladder ends where one-shot pruning would
fixed = plan_iterative(g, "l1", 0.05, 19, recompute=False)
one = plan_oneshot(g, None, "l1", 0.95)
same = [gp.removed for gp in fixed.cumulative.groups] == [gp.removed for gp in one.groups]
print("\nfixed-ranking ladder == one-shot at 0.95:", same)

capped = plan_oneshot(g, None, "l1", 0.9, cap=0.4)
for gp in capped.groups:
    if gp.kind != "frozen":
        print(f"  {gp.kind:<15} n={gp.size:>3} removed {len(gp.removed):>3} ({len(gp.removed) / gp.size:.3f})")
print("params capped / uncapped:",
      count_params(apply_plan(g, capped)).total_params,
      count_params(apply_plan(g, plan_oneshot(g, None, "l1", 0.9))).total_params)
