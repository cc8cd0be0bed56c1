"""Parameter, FLOP and size accounting.

FLOP convention: one multiply and one add are counted separately, so
conv2d = 2*i*o*kH*kW*H_out*W_out (+ o*H_out*W_out with bias) and
dense = 2*in*out per sample.  Batchnorm is a fused scale-shift (2 per
element), softmax costs 5 per element, relu/add/pooling/upsampling cost one
per output element; input and concat are free.  Every count is multiplied by
the batch size.

Batchnorm running mean/var count towards ``total_params`` and ``model_bytes``
(they are stored on disk) but not towards ``trainable_params``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .graph import ModelGraph, shape_check

FLOPS_CONVENTION = (
    "FLOPs = 2*MACs for conv2d/dense (+1 per output for conv bias); batchnorm 2/elem; "
    "relu, add, pooling, upsample 1/output elem; softmax 5/elem; batch size multiplies all"
)


@dataclass
class CostReport:
    total_params: int = 0
    trainable_params: int = 0
    node_params: dict = field(default_factory=dict)
    total_flops: int | None = None
    node_flops: dict | None = None
    input_shape: tuple | None = None
    latency: dict | None = None

    @property
    def model_bytes(self) -> int:
        return 4 * self.total_params

    def to_json(self) -> dict:
        d = {
            "total_params": self.total_params,
            "trainable_params": self.trainable_params,
            "model_bytes": self.model_bytes,
            "node_params": self.node_params,
        }
        if self.total_flops is not None:
            d.update(
                flops_convention=FLOPS_CONVENTION,
                input_shape=list(self.input_shape),
                total_flops=self.total_flops,
                node_flops=self.node_flops,
            )
        if self.latency is not None:
            d["latency"] = self.latency
        return d


def _node_params(g: ModelGraph, n) -> tuple[int, int]:
    """(total, trainable) parameter count of one node."""
    if n.op in ("conv2d", "dense"):
        count = sum(g.weights[k].size for k in n.weights.values())
        return count, count
    if n.op == "batchnorm2d":
        c = g.weight(n, "gamma").size
        return 4 * c, 2 * c
    return 0, 0


def count_params(g: ModelGraph) -> CostReport:
    rep = CostReport()
    for n in g.nodes:
        total, trainable = _node_params(g, n)
        if total:
            rep.node_params[n.id] = total
        rep.total_params += total
        rep.trainable_params += trainable
    return rep


def count_flops(g: ModelGraph, input_shape=None) -> CostReport:
    """FLOPs at ``input_shape`` (defaults to the declared model input)."""
    override = None
    if input_shape is not None:
        override = {g.inputs[0].name: tuple(input_shape)}
    shapes = shape_check(g, override)
    rep = count_params(g)
    rep.node_flops = {}
    total = 0
    for n in g.nodes:
        if n.op in ("input", "concat"):
            continue
        out = shapes[n.outputs[0]]
        batch, elems = out[0], out[1] * out[2] * out[3]
        if n.op == "conv2d":
            o, i, kh, kw = g.weight(n, "weight").shape
            hw = out[2] * out[3]
            f = 2 * i * o * kh * kw * hw + (o * hw if "bias" in n.weights else 0)
            f *= batch
        elif n.op == "dense":
            o, i = g.weight(n, "weight").shape
            f = 2 * i * o * batch
        elif n.op == "batchnorm2d":
            f = 2 * elems * batch
        elif n.op == "softmax":
            f = 5 * elems * batch
        else:
            f = elems * batch
        rep.node_flops[n.id] = f
        total += f
    rep.total_flops = total
    rep.input_shape = tuple(shapes[g.inputs[0].name])
    return rep


def cost_report(g: ModelGraph, input_shape=None, latency=None) -> CostReport:
    rep = count_flops(g, input_shape) if input_shape is not None else count_params(g)
    if latency is not None:
        rep.latency = {"median_ms": latency.median_ms, "min_ms": latency.min_ms, "mean_ms": latency.mean_ms}
    return rep
