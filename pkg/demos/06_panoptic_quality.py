"""
Detection, segmentation and panoptic quality
============================================

Instances match when their IoU is at least 0.5.  DQ is an F1 score over
matches, SQ the mean IoU of matched pairs, and PQ their product.
"""

import numpy as np

from prunec.segmetrics import InstanceMap, compute_pq, match_instances, mean_over_classes

gt = np.zeros((12, 12), int)
gt[1:5, 1:5] = 1
gt[6:10, 2:6] = 2
gt[2:6, 7:11] = 3

pred = np.zeros_like(gt)
pred[1:5, 1:5] = 11  # exact
pred[7:10, 2:6] = 12  # shifted, IoU 0.75
pred[9:12, 9:12] = 13  # spurious

m = match_instances(InstanceMap(pred), InstanceMap(gt))
print("pairs:", m.pairs)
print("fp:", m.fp, "fn:", m.fn)
print({k: round(v, 4) for k, v in compute_pq(m).items()})

# class-aware: pool per class over images, then average the classes
p = InstanceMap(pred, {11: 0, 12: 1, 13: 1})
t = InstanceMap(gt, {1: 0, 2: 1, 3: 1})
res = mean_over_classes([(p, t)])
print("mPQ:", round(res["mpq"], 4), {c: round(v["pq"], 4) for c, v in res["per_class"].items()})
