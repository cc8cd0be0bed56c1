"""
Dead-channel exactness
======================

If a channel class contributes nothing, physically removing it must not
change the network's outputs.  This is the
functional check behind the coupling analysis: a wrong concat offset or a
missed residual member shows up as a large deviation.
"""

import numpy as np

from prunec import zoo
from prunec.depgraph import BN, CONV_OUT, build_groups
from prunec.executor import random_inputs, run
from prunec.planner import GroupPlan, PrunePlan
from prunec.rewriter import apply_plan, plan_fingerprint

g = zoo.build_unet_hovernet(stage_widths=(8, 16, 16, 32), decoder_widths=(16, 8, 8), input_shape=(1, 3, 32, 32))
groups = build_groups(g)
skip = next(grp for grp in groups if grp.spans_skip)
victim = 2

# In a pre-activation encoder the raw stage output reaches the residual sums
# and decoder concats before any batchnorm, so zero the producing filters
# as well as every batchnorm scale and shift carrying the class.
weights = {k: np.array(v) for k, v in g.weights.items()}
for m in skip.classes[victim].loci(CONV_OUT):
    weights[g.node(m.node).weights["weight"]][m.index] = 0
for m in skip.classes[victim].loci(BN):
    node = g.node(m.node)
    weights[node.weights["gamma"]][m.index] = 0
    weights[node.weights["beta"]][m.index] = 0
dead = g.replace(weights=weights)

plan = PrunePlan(
    plan_fingerprint(dead, groups),
    tuple(
        GroupPlan(grp.group_id, grp.producer_signature, grp.kind, grp.size, 0.0,
                  (victim,) if grp is skip else ())
        for grp in groups
    ),
    "manual",
)
pruned = apply_plan(dead, plan, groups)

feed = random_inputs(g, seed=0)
a, b = run(dead, feed), run(pruned, feed)
for t in g.outputs:
    print(f"{t:<12} max |diff| = {np.abs(a[t] - b[t]).max():.2e}")
