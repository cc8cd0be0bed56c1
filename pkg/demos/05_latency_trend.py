"""
Latency trend on the reference executor
=======================================

The numpy executor is slow but deterministic; it is useful for relative
comparisons only.  Pruning 75% of ResNet18's filters cuts the median
forward time by much more than 25%.
"""

from prunec import zoo
from prunec.cost import count_flops
from prunec.executor import measure_latency
from prunec.planner import plan_oneshot
from prunec.rewriter import apply_plan

shape = (1, 3, 112, 112)  # smaller than 224x224 to keep the demo quick
g = zoo.build_resnet18(input_shape=shape)
pruned = apply_plan(g, plan_oneshot(g, None, "l1", 0.75))

for name, model in (("baseline", g), ("s=0.75", pruned)):
    lat = measure_latency(model, reps=5, warmup=1)
    flops = count_flops(model).total_flops
    print(f"{name:<9} {flops / 1e9:6.2f} GFLOPs  median {lat.median_ms:8.1f} ms")
