"""Seeded model builders covering every coupling pattern the analysis handles.

Weights come from ``numpy.random.default_rng(seed)`` (PCG64), drawn in node
order:

* conv2d / dense weight: uniform(-b, b) with b = sqrt(6 / fan_in) (He uniform),
  bias: uniform(-1/sqrt(fan_in), 1/sqrt(fan_in));
* batchnorm2d: gamma ~ U(0.5, 1.5), beta ~ U(-0.1, 0.1),
  running_mean ~ U(-0.1, 0.1), running_var ~ U(0.5, 1.5).

The seed and generator are recorded in the manifest metadata, so the same
arguments always produce byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import ModelGraph, TensorSpec, make_node, validate

GENERATOR = "numpy.default_rng/PCG64; He-uniform conv/dense, U(0.5,1.5) gamma/var, U(-0.1,0.1) beta/mean"


class GraphBuilder:
    """Accumulates nodes and seeded weights; tensor names equal node ids."""

    def __init__(self, name: str, seed: int = 0):
        self.name = name
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.nodes = []
        self.weights = {}
        self.inputs = []
        self.channels = {}

    def _uniform(self, shape, bound):
        return self.rng.uniform(-bound, bound, size=shape).astype(np.float32)

    def _add(self, node_id, op, inputs, channels, attrs=None, weights=None):
        if node_id in self.channels:
            raise ValueError(f"duplicate node id {node_id!r}")
        self.nodes.append(make_node(node_id, op, inputs, [node_id], attrs, weights))
        self.channels[node_id] = channels
        return node_id

    def input(self, name, shape):
        self.inputs.append(TensorSpec(name, tuple(shape)))
        self.nodes.append(make_node(f"{name}_input", "input", [], [name]))
        self.channels[name] = shape[1]
        return name

    def conv(self, node_id, x, out, k=3, stride=1, padding=None, bias=False):
        cin = self.channels[x]
        fan_in = cin * k * k
        self.weights[f"{node_id}.weight"] = self._uniform((out, cin, k, k), np.sqrt(6.0 / fan_in))
        w = {"weight": f"{node_id}.weight"}
        if bias:
            self.weights[f"{node_id}.bias"] = self._uniform((out,), 1.0 / np.sqrt(fan_in))
            w["bias"] = f"{node_id}.bias"
        pad = k // 2 if padding is None else padding
        return self._add(node_id, "conv2d", [x], out, {"stride": stride, "padding": pad}, w)

    def bn(self, node_id, x):
        c = self.channels[x]
        r = self.rng
        vals = {
            "gamma": r.uniform(0.5, 1.5, c),
            "beta": r.uniform(-0.1, 0.1, c),
            "running_mean": r.uniform(-0.1, 0.1, c),
            "running_var": r.uniform(0.5, 1.5, c),
        }
        w = {}
        for role, v in vals.items():
            self.weights[f"{node_id}.{role}"] = v.astype(np.float32)
            w[role] = f"{node_id}.{role}"
        return self._add(node_id, "batchnorm2d", [x], c, {"epsilon": 1e-5}, w)

    def relu(self, node_id, x):
        return self._add(node_id, "relu", [x], self.channels[x])

    def add(self, node_id, *xs):
        return self._add(node_id, "add", list(xs), self.channels[xs[0]])

    def concat(self, node_id, *xs):
        return self._add(node_id, "concat", list(xs), sum(self.channels[x] for x in xs), {"axis": 1})

    def maxpool(self, node_id, x, kernel, stride=None, padding=0):
        return self._add(
            node_id, "maxpool2d", [x], self.channels[x], {"kernel": kernel, "stride": stride or kernel, "padding": padding}
        )

    def gap(self, node_id, x):
        return self._add(node_id, "global_avg_pool", [x], self.channels[x])

    def upsample(self, node_id, x, scale=2):
        return self._add(node_id, "upsample_nearest", [x], self.channels[x], {"scale": scale})

    def dense(self, node_id, x, out, bias=True):
        cin = self.channels[x]
        self.weights[f"{node_id}.weight"] = self._uniform((out, cin), np.sqrt(6.0 / cin))
        w = {"weight": f"{node_id}.weight"}
        if bias:
            self.weights[f"{node_id}.bias"] = self._uniform((out,), 1.0 / np.sqrt(cin))
            w["bias"] = f"{node_id}.bias"
        return self._add(node_id, "dense", [x], out, {}, w)

    def softmax(self, node_id, x):
        return self._add(node_id, "softmax", [x], self.channels[x], {"axis": 1})

    def conv_bn_relu(self, prefix, x, out, k=3, stride=1):
        h = self.conv(f"{prefix}.conv", x, out, k, stride)
        h = self.bn(f"{prefix}.bn", h)
        return self.relu(f"{prefix}.relu", h)

    def build(self, outputs, metadata=None) -> ModelGraph:
        meta = {"builder": self.name, "seed": self.seed, "generator": GENERATOR}
        meta.update(metadata or {})
        g = ModelGraph(
            name=self.name,
            nodes=tuple(self.nodes),
            inputs=tuple(self.inputs),
            outputs=tuple(outputs),
            weights=dict(self.weights),
            metadata=meta,
        )
        validate(g)
        return g


def build_plain_cnn(widths, classes=10, input_shape=(1, 3, 32, 32), seed=0, kernel=3) -> ModelGraph:
    """conv-bn-relu chain, global average pool, dense classifier."""
    if not widths:
        raise ValueError("widths must be non-empty")
    b = GraphBuilder("plain_cnn", seed)
    x = b.input("x", input_shape)
    for i, w in enumerate(widths):
        x = b.conv_bn_relu(f"layer{i}", x, w, kernel)
    x = b.gap("pool", x)
    y = b.dense("fc", x, classes)
    return b.build([y], {"widths": list(widths), "classes": classes})


def _basic_block(b, prefix, x, out, stride):
    # projection first: it becomes the group's earliest (ranking) producer
    shortcut = x
    if stride != 1 or b.channels[x] != out:
        shortcut = b.conv(f"{prefix}.downsample.conv", x, out, 1, stride, padding=0)
        shortcut = b.bn(f"{prefix}.downsample.bn", shortcut)
    h = b.conv(f"{prefix}.conv1", x, out, 3, stride)
    h = b.bn(f"{prefix}.bn1", h)
    h = b.relu(f"{prefix}.relu1", h)
    h = b.conv(f"{prefix}.conv2", h, out, 3, 1)
    h = b.bn(f"{prefix}.bn2", h)
    s = b.add(f"{prefix}.add", h, shortcut)
    return b.relu(f"{prefix}.relu2", s)


def build_resnet18(classes=1000, width_multiplier=1.0, input_shape=(1, 3, 224, 224), seed=0) -> ModelGraph:
    """Basic-block ResNet18: 7x7 stem, 4 stages of 2 blocks, 1x1 projections, GAP, dense head."""
    if width_multiplier <= 0:
        raise ValueError("width_multiplier must be positive")

    def width(c):
        return max(1, int(round(c * width_multiplier)))

    b = GraphBuilder("resnet18", seed)
    x = b.input("x", input_shape)
    x = b.conv("conv1", x, width(64), 7, 2, padding=3)
    x = b.bn("bn1", x)
    x = b.relu("relu", x)
    x = b.maxpool("maxpool", x, 3, 2, 1)
    for stage, (c, stride) in enumerate(zip((64, 128, 256, 512), (1, 2, 2, 2)), start=1):
        for block in range(2):
            x = _basic_block(b, f"layer{stage}.{block}", x, width(c), stride if block == 0 else 1)
    x = b.gap("avgpool", x)
    y = b.dense("fc", x, classes)
    return b.build([y], {"classes": classes, "width_multiplier": width_multiplier})


def _preact_bottleneck(b, prefix, x, out, stride, project):
    mid = max(1, out // 4)
    pre = b.relu(f"{prefix}.preact.relu", b.bn(f"{prefix}.preact.bn", x))
    shortcut = b.conv(f"{prefix}.shortcut", pre, out, 1, stride, padding=0) if project else x
    h = b.conv(f"{prefix}.conv1", pre, mid, 1, 1, padding=0)
    h = b.relu(f"{prefix}.relu1", b.bn(f"{prefix}.bn1", h))
    h = b.conv(f"{prefix}.conv2", h, mid, 3, stride)
    h = b.relu(f"{prefix}.relu2", b.bn(f"{prefix}.bn2", h))
    h = b.conv(f"{prefix}.conv3", h, out, 1, 1, padding=0)
    return b.add(f"{prefix}.add", h, shortcut)


def preact_encoder(b: GraphBuilder, x, stage_widths, blocks_per_stage, stem_width=None, prefix="enc"):
    """Stem conv-bn-relu followed by pre-activation bottleneck stages.

    Returns the stage output tensors (the raw residual sums) followed by the
    post-activated bottleneck tensor.  The first block of every stage carries
    a 1x1 projection, so each stage's conv3 layers and projection share one
    channel class set.
    """
    if isinstance(blocks_per_stage, int):
        blocks_per_stage = [blocks_per_stage] * len(stage_widths)
    if len(blocks_per_stage) != len(stage_widths):
        raise ValueError("blocks_per_stage must match stage_widths")
    stem = stem_width or stage_widths[0]
    x = b.conv_bn_relu(f"{prefix}.stem", x, stem, 7)
    taps = []
    for s, (width, blocks) in enumerate(zip(stage_widths, blocks_per_stage)):
        for k in range(blocks):
            stride = 2 if (s > 0 and k == 0) else 1
            x = _preact_bottleneck(b, f"{prefix}.stage{s}.block{k}", x, width, stride, project=(k == 0))
        taps.append(x)
    bottleneck = b.relu(f"{prefix}.final.relu", b.bn(f"{prefix}.final.bn", x))
    return taps[:-1] + [bottleneck]


@dataclass(frozen=True)
class EncoderModel:
    graph: ModelGraph
    taps: tuple[str, ...]


def build_preact_resnet_encoder(
    stage_widths=(16, 32, 64, 128),
    blocks_per_stage=2,
    classes=10,
    input_shape=(1, 3, 64, 64),
    seed=0,
) -> EncoderModel:
    """Standalone pre-activation encoder with a GAP + dense head; also reports its taps."""
    b = GraphBuilder("preact_encoder", seed)
    x = b.input("x", input_shape)
    taps = preact_encoder(b, x, list(stage_widths), blocks_per_stage)
    y = b.dense("head", b.gap("pool", taps[-1]), classes)
    g = b.build([y], {"stage_widths": list(stage_widths), "classes": classes})
    return EncoderModel(g, tuple(taps))


BRANCHES = ("np", "hv", "tp")


def build_unet_hovernet(
    stage_widths=(16, 32, 64, 128),
    blocks_per_stage=2,
    decoder_widths=(32, 16, 16),
    nc_classes=6,
    input_shape=(1, 3, 64, 64),
    seed=0,
) -> ModelGraph:
    """Pre-activation encoder with three structurally identical decoders.

    Each decoder upsamples (nearest, x2), concatenates the matching encoder
    tap and applies conv-bn-relu; the heads are 1x1 convs emitting 2 (nuclei
    pixels), 2 (horizontal/vertical maps) and ``nc_classes`` channels at input
    resolution.
    """
    if len(decoder_widths) != len(stage_widths) - 1:
        raise ValueError("need one decoder width per encoder skip level")
    b = GraphBuilder("hovernet_toy", seed)
    x = b.input("x", input_shape)
    taps = preact_encoder(b, x, list(stage_widths), blocks_per_stage)
    skips, bottleneck = taps[:-1], taps[-1]
    heads = []
    for branch, n_out in zip(BRANCHES, (2, 2, nc_classes)):
        d = bottleneck
        for level, width in zip(range(len(skips) - 1, -1, -1), decoder_widths):
            p = f"dec.{branch}.u{level}"
            d = b.upsample(f"{p}.up", d)
            d = b.concat(f"{p}.cat", d, skips[level])
            d = b.conv_bn_relu(p, d, width, 3)
        heads.append(b.conv(f"dec.{branch}.head", d, n_out, 1, 1, padding=0, bias=True))
    meta = {
        "stage_widths": list(stage_widths),
        "decoder_widths": list(decoder_widths),
        "nc_classes": nc_classes,
        "upsample": "nearest",
    }
    return b.build(heads, meta)


ARCHS = {
    "plain": lambda classes=10, width_mult=1.0, seed=0: build_plain_cnn(
        [max(1, int(round(w * width_mult))) for w in (16, 32, 64)], classes, seed=seed
    ),
    "resnet18": lambda classes=1000, width_mult=1.0, seed=0: build_resnet18(classes, width_mult, seed=seed),
    "preact-encoder": lambda classes=10, width_mult=1.0, seed=0: build_preact_resnet_encoder(
        [max(4, int(round(w * width_mult))) for w in (16, 32, 64, 128)], 2, classes, seed=seed
    ).graph,
    "hovernet-toy": lambda classes=6, width_mult=1.0, seed=0: build_unet_hovernet(
        [max(4, int(round(w * width_mult))) for w in (16, 32, 64, 128)],
        2,
        [max(1, int(round(w * width_mult))) for w in (32, 16, 16)],
        classes,
        seed=seed,
    ),
}
