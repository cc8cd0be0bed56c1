"""Channel dependency analysis.

Every conv output filter and dense output feature gets a channel id.  Ids
flow forward through the graph: shape-preserving ops pass the id list through, ``concat`` joins the
lists, ``add`` merges its operands position-wise in a union-find, and
conv/dense layers record which ids they consume before starting fresh ids for
their own outputs.  The union-find roots are the channel classes: sets of
channel positions that any valid pruning must keep or drop together.  Classes
are then bucketed into prune groups by the set of convolutions producing them.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from scipy.cluster.hierarchy import DisjointSet

from .errors import ShapeMismatch, Unsupported
from .graph import ModelGraph, shape_check

CONV_OUT = "conv_out_filter"
CONV_IN = "conv_in_slice"
BN = "bn_channel"
DENSE_IN = "dense_in_feature"
DENSE_OUT = "dense_out_feature"
GRAPH_OUT = "graph_output_channel"
GRAPH_IN = "graph_input_channel"

PRODUCER_ROLES = (CONV_OUT, DENSE_OUT)

_PASSTHROUGH = {"relu", "maxpool2d", "global_avg_pool", "upsample_nearest", "softmax"}


class ChannelLocus(NamedTuple):
    node: str
    role: str
    index: int


@dataclass(frozen=True)
class ChannelClass:
    class_id: int
    members: tuple[ChannelLocus, ...]

    def loci(self, role: str) -> list[ChannelLocus]:
        return [m for m in self.members if m.role == role]

    def index_in(self, node: str, role: str | tuple[str, ...]) -> int | None:
        roles = (role,) if isinstance(role, str) else role
        for m in self.members:
            if m.node == node and m.role in roles:
                return m.index
        return None


@dataclass(frozen=True)
class PruneGroup:
    """Channel classes sharing one producer signature.

    ``pinned`` is set when a class reaches a model output, a model input or a
    softmax (whose normalisation couples every channel); such groups are
    frozen.  ``spans_skip`` marks classes that enter a concat through a tensor
    that also feeds other consumers, i.e. an encoder-to-decoder skip.
    """

    group_id: int
    classes: tuple[ChannelClass, ...]
    producer_signature: tuple[str, ...]
    representative: str
    pinned: bool = False
    spans_skip: bool = False
    kind: str | None = None

    @property
    def size(self) -> int:
        return len(self.classes)


class _Analysis(NamedTuple):
    ids: dict  # tensor name -> np.ndarray of raw channel ids
    ds: DisjointSet
    loci: list  # (raw id, ChannelLocus)
    pinned: set
    skip: set


def _propagate(g: ModelGraph) -> _Analysis:
    shapes = shape_check(g)
    consumers = g.consumers()
    output_set = set(g.outputs)
    ds = DisjointSet()
    ids: dict[str, np.ndarray] = {}
    loci: list[tuple[int, ChannelLocus]] = []
    pinned: set[int] = set()
    skip: set[int] = set()
    counter = 0

    def fresh(n):
        nonlocal counter
        new = np.arange(counter, counter + n)
        counter += n
        for x in new.tolist():
            ds.add(x)
        return new

    for n in g.nodes:
        op = n.op
        if op == "input":
            new = fresh(shapes[n.outputs[0]][1])
            pinned.update(new.tolist())
            loci.extend((c, ChannelLocus(n.id, GRAPH_IN, i)) for i, c in enumerate(new.tolist()))
            ids[n.outputs[0]] = new
            continue
        ins = [ids[t] for t in n.inputs]
        if op == "conv2d":
            loci.extend((c, ChannelLocus(n.id, CONV_IN, i)) for i, c in enumerate(ins[0].tolist()))
            new = fresh(shapes[n.outputs[0]][1])
            loci.extend((c, ChannelLocus(n.id, CONV_OUT, i)) for i, c in enumerate(new.tolist()))
            out = new
        elif op == "dense":
            loci.extend((c, ChannelLocus(n.id, DENSE_IN, i)) for i, c in enumerate(ins[0].tolist()))
            new = fresh(shapes[n.outputs[0]][1])
            loci.extend((c, ChannelLocus(n.id, DENSE_OUT, i)) for i, c in enumerate(new.tolist()))
            out = new
        elif op == "batchnorm2d":
            loci.extend((c, ChannelLocus(n.id, BN, i)) for i, c in enumerate(ins[0].tolist()))
            out = ins[0]
        elif op in _PASSTHROUGH:
            if op == "softmax":
                pinned.update(ins[0].tolist())
            out = ins[0]
        elif op == "add":
            for other in ins[1:]:
                if len(other) != len(ins[0]):
                    raise ShapeMismatch(f"node {n.id!r}: add operands carry {len(ins[0])} and {len(other)} channels")
                for a, b in zip(ins[0].tolist(), other.tolist()):
                    ds.merge(a, b)
            out = ins[0]
        elif op == "concat":
            for t, lst in zip(n.inputs, ins):
                if len(consumers.get(t, ())) + (t in output_set) >= 2:
                    skip.update(lst.tolist())
            out = np.concatenate(ins)
        else:
            raise Unsupported(f"node {n.id!r}: op {op!r} has no channel semantics")
        ids[n.outputs[0]] = out

    producers = g.producers()
    for t in g.outputs:
        lst = ids[t].tolist()
        pinned.update(lst)
        loci.extend((c, ChannelLocus(producers[t].id, GRAPH_OUT, i)) for i, c in enumerate(lst))
    return _Analysis(ids, ds, loci, pinned, skip)


def build_groups(g: ModelGraph) -> list[PruneGroup]:
    """Partition all conv output filters into classes and bucket them into groups."""
    an = _propagate(g)
    topo = {n.id: i for i, n in enumerate(g.nodes)}

    members: dict[int, list[ChannelLocus]] = {}
    pinned_roots, skip_roots = set(), set()
    for raw, locus in an.loci:
        members.setdefault(an.ds[raw], []).append(locus)
    for raw in an.pinned:
        pinned_roots.add(an.ds[raw])
    for raw in an.skip:
        skip_roots.add(an.ds[raw])

    filters = {n.id: n for n in g.nodes if n.op in ("conv2d", "dense")}
    buckets: dict[tuple[str, ...], list[tuple[int, list[ChannelLocus]]]] = {}
    for root, locs in members.items():
        prod = [m for m in locs if m.role in PRODUCER_ROLES]
        if not prod:
            continue
        names = [m.node for m in prod]
        if len(set(names)) != len(names):
            raise Unsupported(f"a channel class holds several filters of one conv ({sorted(names)})")
        sig = tuple(sorted(names))
        buckets.setdefault(sig, []).append((root, locs))

    groups = []
    for sig, entries in buckets.items():
        rep = min(sig, key=topo.__getitem__)
        for conv in sig:
            n_filters = g.weight(filters[conv], "weight").shape[0]
            if n_filters != len(entries):
                raise Unsupported(
                    f"producers {list(sig)} share {len(entries)} classes but {conv!r} has {n_filters} filters"
                )
        entries.sort(key=lambda e: next(m.index for m in e[1] if m.role in PRODUCER_ROLES and m.node == rep))
        groups.append(
            (
                topo[rep],
                sig,
                rep,
                entries,
                any(r in pinned_roots for r, _ in entries),
                any(r in skip_roots for r, _ in entries),
            )
        )
    groups.sort(key=lambda x: x[0])

    out = []
    next_class = 0
    for gid, (_, sig, rep, entries, pinned, skip) in enumerate(groups):
        classes = []
        for _, locs in entries:
            locs = sorted(locs, key=lambda m: (topo[m.node], m.role, m.index))
            classes.append(ChannelClass(next_class, tuple(locs)))
            next_class += 1
        out.append(
            PruneGroup(
                group_id=gid,
                classes=tuple(classes),
                producer_signature=sig,
                representative=rep,
                pinned=pinned,
                spans_skip=skip,
            )
        )
    return classify_groups(out)


def classify_groups(groups: list[PruneGroup]) -> list[PruneGroup]:
    """Assign ``kind``: frozen beats interdependent beats local."""
    result = []
    for grp in groups:
        if grp.pinned:
            kind = "frozen"
        elif len(grp.producer_signature) >= 2 or grp.spans_skip:
            kind = "interdependent"
        else:
            kind = "local"
        result.append(replace(grp, kind=kind))
    return result


def channel_ids(g: ModelGraph) -> dict[str, list[int]]:
    """Class root id carried by each channel of every tensor (debug helper)."""
    an = _propagate(g)
    return {t: [an.ds[c] for c in lst.tolist()] for t, lst in an.ids.items()}


_COLORS = {"local": "forestgreen", "interdependent": "darkorange", "frozen": "gray40"}


def groups_to_dot(groups: list[PruneGroup], g: ModelGraph | None = None) -> str:
    """Graphviz text with one cluster per group, coloured by kind."""
    lines = ["digraph prune_groups {", "  rankdir=LR;", "  node [shape=box, fontsize=10];"]
    for grp in groups:
        color = _COLORS.get(grp.kind, "black")
        label = f"group {grp.group_id}: {grp.kind}, {grp.size} classes"
        lines.append(f"  subgraph cluster_{grp.group_id} {{")
        lines.append(f'    label="{label}";')
        lines.append(f"    color={color};")
        roles: dict[tuple[str, str], int] = {}
        for cls in grp.classes:
            for m in cls.members:
                roles[(m.node, m.role)] = roles.get((m.node, m.role), 0) + 1
        order = {n.id: i for i, n in enumerate(g.nodes)} if g is not None else {}
        for node, role in sorted(roles, key=lambda k: (order.get(k[0], 0), k[0], k[1])):
            name = f"g{grp.group_id}/{node}/{role}"
            lines.append(f'    "{name}" [label="{node}\\n{role} x{roles[(node, role)]}", color={color}];')
        lines.append("  }")
    lines.append("}")
    return "\n".join(lines) + "\n"
