"""Network graph data model, shape inference and the on-disk interchange format.

A model is stored as two files:

* a UTF-8 JSON manifest (``format_version`` 1) describing inputs, outputs,
  nodes and the tensor table, serialized with sorted keys and no
  insignificant whitespace;
* a weight blob: ``b"SPRW"`` + little-endian u32 version + f32 little-endian
  tensor data at the byte offsets declared in the tensor table.

Offsets are absolute positions inside the blob, so the first tensor starts at
byte 8.  Tensors are laid out in order of first reference by the node list
(weight roles in sorted order), followed by any unreferenced tensors sorted by
key.
"""

from __future__ import annotations

import heapq
import json
import struct
from dataclasses import dataclass, field
from typing import Mapping

import jsonschema
import numpy as np

from .errors import (
    BadMagic,
    CyclicGraph,
    DanglingTensorRef,
    MalformedManifest,
    ShapeMismatch,
    Unsupported,
    UnsupportedFlatten,
    VersionUnsupported,
)

MAGIC = b"SPRW"
FORMAT_VERSION = 1
HEADER_SIZE = 8

OPS = (
    "input",
    "conv2d",
    "batchnorm2d",
    "relu",
    "add",
    "concat",
    "maxpool2d",
    "global_avg_pool",
    "upsample_nearest",
    "dense",
    "softmax",
)

# weight roles each op may carry; the first tuple is mandatory
WEIGHT_ROLES = {
    "conv2d": (("weight",), ("bias",)),
    "batchnorm2d": (("gamma", "beta", "running_mean", "running_var"), ()),
    "dense": (("weight",), ("bias",)),
}

ATTR_DEFAULTS = {
    "conv2d": {"stride": 1, "padding": 0, "dilation": 1, "groups": 1},
    "batchnorm2d": {"epsilon": 1e-5},
    "concat": {"axis": 1},
    "softmax": {"axis": 1},
    "upsample_nearest": {"scale": 2},
}

_INT = {"type": "integer"}
_SHAPE = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1}

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["format_version", "name", "inputs", "outputs", "nodes", "tensors"],
    "properties": {
        "format_version": _INT,
        "name": {"type": "string"},
        "metadata": {"type": "object"},
        "inputs": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "dtype", "shape"],
                "properties": {
                    "name": {"type": "string"},
                    "dtype": {"const": "f32"},
                    "shape": _SHAPE,
                },
                "additionalProperties": False,
            },
        },
        "outputs": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "nodes": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "op", "inputs", "outputs"],
                "properties": {
                    "id": {"type": "string", "minLength": 1},
                    "op": {"enum": list(OPS)},
                    "inputs": {"type": "array", "items": {"type": "string"}},
                    "outputs": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                    "attrs": {"type": "object"},
                    "weights": {"type": "object", "additionalProperties": {"type": "string"}},
                },
                "additionalProperties": False,
            },
        },
        "tensors": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["dtype", "shape", "offset"],
                "properties": {
                    "dtype": {"const": "f32"},
                    "shape": _SHAPE,
                    "offset": {"type": "integer", "minimum": 0},
                },
                "additionalProperties": False,
            },
        },
    },
    "additionalProperties": False,
}


@dataclass(frozen=True)
class TensorSpec:
    name: str
    shape: tuple[int, ...]
    dtype: str = "f32"

    def __post_init__(self):
        if not self.shape or any(int(d) < 1 for d in self.shape):
            raise MalformedManifest(f"tensor {self.name!r}: bad shape {self.shape}")
        if self.dtype != "f32":
            raise MalformedManifest(f"tensor {self.name!r}: dtype {self.dtype} unsupported")


@dataclass(frozen=True)
class Node:
    id: str
    op: str
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    attrs: Mapping = field(default_factory=dict)
    weights: Mapping[str, str] = field(default_factory=dict)

    def attr(self, name):
        return self.attrs.get(name, ATTR_DEFAULTS.get(self.op, {}).get(name))


@dataclass(frozen=True, eq=False)
class ModelGraph:
    """Immutable DAG of tensor operations with attached f32 weights.

    ``weights`` maps tensor keys to read-only float32 arrays; byte offsets are
    assigned when the graph is serialized.
    """

    name: str
    nodes: tuple[Node, ...]
    inputs: tuple[TensorSpec, ...]
    outputs: tuple[str, ...]
    weights: Mapping[str, np.ndarray]
    metadata: Mapping = field(default_factory=dict)

    def __post_init__(self):
        for arr in self.weights.values():
            arr.flags.writeable = False
        object.__setattr__(self, "_index", {n.id: n for n in self.nodes})

    def node(self, node_id: str) -> Node:
        return self._index[node_id]

    def weight(self, node: Node | str, role: str) -> np.ndarray | None:
        if isinstance(node, str):
            node = self.node(node)
        key = node.weights.get(role)
        return None if key is None else self.weights[key]

    def producers(self) -> dict[str, Node]:
        return {t: n for n in self.nodes for t in n.outputs}

    def consumers(self) -> dict[str, list[Node]]:
        out: dict[str, list[Node]] = {}
        for n in self.nodes:
            for t in n.inputs:
                out.setdefault(t, []).append(n)
        return out

    def tensor_order(self) -> list[str]:
        seen: dict[str, None] = {}
        for n in self.nodes:
            for role in sorted(n.weights):
                seen.setdefault(n.weights[role], None)
        rest = sorted(k for k in self.weights if k not in seen)
        return list(seen) + rest

    def tensor_table(self) -> dict[str, dict]:
        table = {}
        offset = HEADER_SIZE
        for key in self.tensor_order():
            arr = self.weights[key]
            table[key] = {"dtype": "f32", "shape": list(arr.shape), "offset": offset}
            offset += 4 * arr.size
        return table

    def replace(self, **changes) -> "ModelGraph":
        fields = dict(
            name=self.name,
            nodes=self.nodes,
            inputs=self.inputs,
            outputs=self.outputs,
            weights=self.weights,
            metadata=self.metadata,
        )
        fields.update(changes)
        return ModelGraph(**fields)


def _normalize_attrs(op, attrs):
    merged = dict(ATTR_DEFAULTS.get(op, {}))
    merged.update(attrs or {})
    return merged


def make_node(node_id, op, inputs, outputs, attrs=None, weights=None) -> Node:
    return Node(
        id=node_id,
        op=op,
        inputs=tuple(inputs),
        outputs=tuple(outputs),
        attrs=_normalize_attrs(op, attrs),
        weights=dict(weights or {}),
    )


# ----------------------------------------------------------------------------
# topological order


def topo_order(g: ModelGraph | None = None, *, nodes=None) -> list[str]:
    """Deterministic Kahn order; ready nodes are released by ascending id."""
    nodes = list(g.nodes if nodes is None else nodes)
    producer = {}
    for n in nodes:
        for t in n.outputs:
            producer[t] = n.id
    deps = {n.id: set() for n in nodes}
    users: dict[str, set] = {n.id: set() for n in nodes}
    for n in nodes:
        for t in n.inputs:
            p = producer.get(t)
            if p is not None and p != n.id:
                deps[n.id].add(p)
                users[p].add(n.id)
            elif p == n.id:
                raise CyclicGraph(f"node {n.id!r} consumes its own output {t!r}")
    ready = [nid for nid, d in deps.items() if not d]
    heapq.heapify(ready)
    order = []
    remaining = {nid: len(d) for nid, d in deps.items()}
    while ready:
        nid = heapq.heappop(ready)
        order.append(nid)
        for u in users[nid]:
            remaining[u] -= 1
            if remaining[u] == 0:
                heapq.heappush(ready, u)
    if len(order) != len(nodes):
        stuck = sorted(nid for nid, r in remaining.items() if r > 0)
        raise CyclicGraph(f"cycle through nodes {stuck}")
    return order


# ----------------------------------------------------------------------------
# validation and shape inference


def validate_structure(g: ModelGraph) -> None:
    ids = set()
    produced: dict[str, str] = {}
    input_names = {s.name for s in g.inputs}
    for n in g.nodes:
        if n.id in ids:
            raise MalformedManifest(f"duplicate node id {n.id!r}")
        ids.add(n.id)
        if n.op not in OPS:
            raise Unsupported(f"node {n.id!r}: op {n.op!r}")
        for t in n.inputs:
            if t not in produced:
                raise DanglingTensorRef(f"node {n.id!r}: input {t!r} is not produced by an earlier node")
        for t in n.outputs:
            if t in produced:
                raise MalformedManifest(f"node {n.id!r}: tensor {t!r} already produced by {produced[t]!r}")
            produced[t] = n.id
        if n.op == "input":
            if n.inputs or len(n.outputs) != 1 or n.outputs[0] not in input_names:
                raise MalformedManifest(f"input node {n.id!r} must emit one declared model input")
        elif len(n.outputs) != 1:
            raise MalformedManifest(f"node {n.id!r}: expected a single output")
        required, optional = WEIGHT_ROLES.get(n.op, ((), ()))
        for role in required:
            if role not in n.weights:
                raise MalformedManifest(f"node {n.id!r}: missing weight role {role!r}")
        for role, key in n.weights.items():
            if role not in required and role not in optional:
                raise MalformedManifest(f"node {n.id!r}: unexpected weight role {role!r}")
            if key not in g.weights:
                raise DanglingTensorRef(f"node {n.id!r}: tensor key {key!r} not in tensor table")
    for spec in g.inputs:
        if produced.get(spec.name) is None:
            raise MalformedManifest(f"model input {spec.name!r} has no input node")
    for t in g.outputs:
        if t not in produced:
            raise DanglingTensorRef(f"model output {t!r} is not produced by any node")


def _conv_out(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def _expect(node, what, expected, found):
    if tuple(expected) != tuple(found):
        raise ShapeMismatch(f"node {node.id!r}: {what}: expected {tuple(expected)}, found {tuple(found)}")


def infer_node_shape(g: ModelGraph, n: Node, ins: list[tuple[int, ...]]) -> tuple[int, ...]:
    """Output NCHW shape of ``n`` given its input shapes."""
    op = n.op
    if op in ("relu", "softmax"):
        return ins[0]
    if op == "conv2d":
        if n.attr("dilation") != 1 or n.attr("groups") != 1:
            raise Unsupported(f"node {n.id!r}: only dilation=1, groups=1 convolutions are supported")
        stride, pad = int(n.attr("stride")), int(n.attr("padding"))
        if stride < 1 or pad < 0:
            raise ShapeMismatch(f"node {n.id!r}: bad stride/padding {stride}/{pad}")
        w = g.weight(n, "weight")
        if w.ndim != 4:
            raise ShapeMismatch(f"node {n.id!r}: conv weight must be rank 4, found {w.shape}")
        o, i, kh, kw = w.shape
        N, C, H, W = ins[0]
        _expect(n, "input channels", (i,), (C,))
        b = g.weight(n, "bias")
        if b is not None:
            _expect(n, "bias shape", (o,), b.shape)
        ho, wo = _conv_out(H, kh, stride, pad), _conv_out(W, kw, stride, pad)
        if ho < 1 or wo < 1:
            raise ShapeMismatch(f"node {n.id!r}: kernel {kh}x{kw} larger than padded input {H}x{W}")
        return (N, o, ho, wo)
    if op == "batchnorm2d":
        C = ins[0][1]
        if not n.attr("epsilon") > 0:
            raise ShapeMismatch(f"node {n.id!r}: epsilon must be positive")
        for role in WEIGHT_ROLES["batchnorm2d"][0]:
            _expect(n, role, (C,), g.weight(n, role).shape)
        if np.any(g.weight(n, "running_var") < 0):
            raise ShapeMismatch(f"node {n.id!r}: negative running_var")
        return ins[0]
    if op == "add":
        for s in ins[1:]:
            _expect(n, "add operand shape", ins[0], s)
        return ins[0]
    if op == "concat":
        if n.attr("axis") != 1:
            raise Unsupported(f"node {n.id!r}: concat only along the channel axis")
        N, _, H, W = ins[0]
        for s in ins[1:]:
            _expect(n, "concat operand N,H,W", (N, H, W), (s[0], s[2], s[3]))
        return (N, sum(s[1] for s in ins), H, W)
    if op == "maxpool2d":
        if n.attr("kernel") is None:
            raise MalformedManifest(f"node {n.id!r}: maxpool2d needs a kernel attribute")
        k = int(n.attr("kernel"))
        stride = int(n.attr("stride") or k)
        pad = int(n.attr("padding") or 0)
        N, C, H, W = ins[0]
        return (N, C, _conv_out(H, k, stride, pad), _conv_out(W, k, stride, pad))
    if op == "global_avg_pool":
        N, C, _, _ = ins[0]
        return (N, C, 1, 1)
    if op == "upsample_nearest":
        scale = int(n.attr("scale"))
        if scale < 2:
            raise ShapeMismatch(f"node {n.id!r}: upsample scale must be >= 2")
        N, C, H, W = ins[0]
        return (N, C, H * scale, W * scale)
    if op == "dense":
        N, C, H, W = ins[0]
        if H * W != 1:
            raise UnsupportedFlatten(f"node {n.id!r}: dense consumes {H}x{W} spatial input")
        w = g.weight(n, "weight")
        if w.ndim != 2:
            raise ShapeMismatch(f"node {n.id!r}: dense weight must be rank 2, found {w.shape}")
        _expect(n, "in_features", (w.shape[1],), (C,))
        b = g.weight(n, "bias")
        if b is not None:
            _expect(n, "bias shape", (w.shape[0],), b.shape)
        return (N, w.shape[0], 1, 1)
    raise Unsupported(f"node {n.id!r}: op {op!r}")


def shape_check(g: ModelGraph, input_shapes: Mapping[str, tuple] | None = None) -> dict[str, tuple[int, ...]]:
    """Infer every edge's NCHW shape; raises on the first violation.

    ``input_shapes`` overrides the declared model input shapes (e.g. to cost a
    model at another resolution).
    """
    shapes: dict[str, tuple[int, ...]] = {}
    declared = {s.name: tuple(s.shape) for s in g.inputs}
    if input_shapes:
        declared.update({k: tuple(int(d) for d in v) for k, v in input_shapes.items()})
    for n in g.nodes:
        if n.op == "input":
            s = declared[n.outputs[0]]
            if len(s) != 4:
                raise ShapeMismatch(f"model input {n.outputs[0]!r} must be NCHW, found {s}")
            shapes[n.outputs[0]] = s
            continue
        ins = [shapes[t] for t in n.inputs]
        if not ins:
            raise ShapeMismatch(f"node {n.id!r}: no inputs")
        for s in ins:
            if len(s) != 4:
                raise ShapeMismatch(f"node {n.id!r}: non-NCHW input {s}")
        shapes[n.outputs[0]] = infer_node_shape(g, n, ins)
    return shapes


def validate(g: ModelGraph) -> dict[str, tuple[int, ...]]:
    validate_structure(g)
    return shape_check(g)


# ----------------------------------------------------------------------------
# serialization


def _node_to_json(n: Node) -> dict:
    d = {"id": n.id, "op": n.op, "inputs": list(n.inputs), "outputs": list(n.outputs)}
    if n.attrs:
        d["attrs"] = dict(n.attrs)
    if n.weights:
        d["weights"] = dict(n.weights)
    return d


def manifest_dict(g: ModelGraph) -> dict:
    d = {
        "format_version": FORMAT_VERSION,
        "name": g.name,
        "inputs": [{"name": s.name, "dtype": s.dtype, "shape": list(s.shape)} for s in g.inputs],
        "outputs": list(g.outputs),
        "nodes": [_node_to_json(n) for n in g.nodes],
        "tensors": g.tensor_table(),
    }
    if g.metadata:
        d["metadata"] = dict(g.metadata)
    return d


def dumps_canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False).encode("utf-8")


def save_model(g: ModelGraph) -> tuple[bytes, bytes]:
    """Serialize to ``(manifest_bytes, weights_bytes)`` deterministically."""
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    for key in g.tensor_order():
        parts.append(np.ascontiguousarray(g.weights[key], dtype="<f4").tobytes())
    return dumps_canonical(manifest_dict(g)), b"".join(parts)


def load_model(manifest_bytes: bytes, weights_bytes: bytes) -> ModelGraph:
    """Parse and fully validate a manifest + weight blob pair."""
    try:
        doc = json.loads(manifest_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedManifest(f"manifest is not UTF-8 JSON: {exc}") from None
    try:
        jsonschema.validate(doc, MANIFEST_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise MalformedManifest(f"at {where}: {exc.message}") from None
    if doc["format_version"] != FORMAT_VERSION:
        raise VersionUnsupported(f"manifest format_version {doc['format_version']}")

    if len(weights_bytes) < HEADER_SIZE or weights_bytes[:4] != MAGIC:
        raise BadMagic(f"weight blob does not start with {MAGIC!r}")
    (version,) = struct.unpack_from("<I", weights_bytes, 4)
    if version != FORMAT_VERSION:
        raise VersionUnsupported(f"weight blob version {version}")

    weights = {}
    ranges = []
    for key, t in doc["tensors"].items():
        shape = tuple(t["shape"])
        nbytes = 4 * int(np.prod(shape))
        start = t["offset"]
        if start < HEADER_SIZE or start + nbytes > len(weights_bytes):
            raise MalformedManifest(f"tensor {key!r}: byte range [{start}, {start + nbytes}) outside blob")
        ranges.append((start, start + nbytes, key))
        arr = np.frombuffer(weights_bytes, dtype="<f4", count=nbytes // 4, offset=start)
        weights[key] = arr.astype(np.float32).reshape(shape)
    ranges.sort()
    for (s0, e0, k0), (s1, _, k1) in zip(ranges, ranges[1:]):
        if s1 < e0:
            raise MalformedManifest(f"tensors {k0!r} and {k1!r} overlap in the blob")

    inputs = tuple(TensorSpec(s["name"], tuple(s["shape"])) for s in doc["inputs"])
    nodes = [
        make_node(n["id"], n["op"], n["inputs"], n["outputs"], n.get("attrs"), n.get("weights"))
        for n in doc["nodes"]
    ]
    _check_refs(nodes, weights, inputs)
    produced_before = set()
    in_order = True
    for n in nodes:
        if any(t not in produced_before for t in n.inputs):
            in_order = False
        produced_before.update(n.outputs)
    if not in_order:
        index = {n.id: n for n in nodes}
        nodes = [index[i] for i in topo_order(nodes=nodes)]
    g = ModelGraph(
        name=doc["name"],
        nodes=tuple(nodes),
        inputs=inputs,
        outputs=tuple(doc["outputs"]),
        weights=weights,
        metadata=doc.get("metadata", {}),
    )
    validate(g)
    return g


def _check_refs(nodes, weights, inputs):
    produced = {t for n in nodes for t in n.outputs}
    for n in nodes:
        for role, key in n.weights.items():
            if key not in weights:
                raise DanglingTensorRef(f"node {n.id!r}: weight {role!r} references missing tensor {key!r}")
        for t in n.inputs:
            if t not in produced:
                raise DanglingTensorRef(f"node {n.id!r}: input tensor {t!r} is never produced")


def read_model(manifest_path, weights_path=None) -> ModelGraph:
    from pathlib import Path

    manifest_path = Path(manifest_path)
    if weights_path is None:
        weights_path = manifest_path.with_suffix(".bin")
    return load_model(manifest_path.read_bytes(), Path(weights_path).read_bytes())


def write_model(g: ModelGraph, prefix) -> tuple[str, str]:
    """Write ``<prefix>.json`` and ``<prefix>.bin``; returns both paths."""
    from pathlib import Path

    m, w = save_model(g)
    mp, wp = Path(f"{prefix}.json"), Path(f"{prefix}.bin")
    mp.write_bytes(m)
    wp.write_bytes(w)
    return str(mp), str(wp)
