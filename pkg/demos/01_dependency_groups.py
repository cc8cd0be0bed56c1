"""
Channel dependency groups
=========================

Residual additions tie the channels of several convolutions together:
removing filter 3 from one of them forces removing filter 3 from all of
them.  This walks through the groups found in ResNet18 and in the toy
HoverNet, where encoder skips also feed three decoders through concats.
"""

from prunec import zoo
from prunec.depgraph import CONV_IN, build_groups

# ResNet18: one interdependent group per stage, one local group per block
g = zoo.build_resnet18()
groups = build_groups(g)
print(f"{'id':>3} {'kind':<15} {'size':>4}  producers")
for grp in groups:
    print(f"{grp.group_id:>3} {grp.kind:<15} {grp.size:>4}  {', '.join(grp.producer_signature)}")

# The representative is the earliest producer.  In stage 2 that is the
# 1x1 projection on the shortcut rather than a convolution on the branch.
stage2 = next(grp for grp in groups if "layer2.0.downsample.conv" in grp.producer_signature)
print("\nstage 2 ranks through:", stage2.representative)

# HoverNet-style U-Net: a skip group's channels reach every decoder
h = zoo.build_unet_hovernet()
skip = next(grp for grp in build_groups(h) if grp.spans_skip)
first = skip.classes[0]
print("\nskip group", skip.producer_signature, "size", skip.size)
for m in first.loci(CONV_IN):
    print(f"  class 0 enters {m.node:<28} at input channel {m.index}")
