"""``prunec`` command line.

Exit codes: 0 success, 1 verification failure, 2 usage error, 3 data/model
error.  Diagnostics go to stderr as a single ``error_code: message`` line.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import zoo
from .cost import cost_report
from .depgraph import build_groups, groups_to_dot
from .errors import PruneError, UsageError
from .executor import measure_latency, run
from .graph import read_model, shape_check, write_model
from .planner import plan_iterative, plan_oneshot
from .rewriter import apply_plan
from .segmetrics import compute_pq, match_instances, mean_over_classes, read_instance_map


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _default_seed() -> int:
    env = os.environ.get("PRUNEC_SEED")
    try:
        return int(env) if env else 42
    except ValueError:
        raise UsageError(f"PRUNEC_SEED must be an integer, got {env!r}") from None


def _shape(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(d) for d in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}; expected NxCxHxW") from None
    if len(dims) != 4 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}; expected NxCxHxW")
    return dims


def _bool(text: str) -> bool:
    if text.lower() in ("true", "1", "yes"):
        return True
    if text.lower() in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _load(args):
    return read_model(args.model, getattr(args, "weights", None))


def cmd_inspect(args, out):
    g = _load(args)
    shapes = shape_check(g, {g.inputs[0].name: args.input} if args.input else None)
    out.write(f"model {g.name}: {len(g.nodes)} nodes, {len(g.weights)} tensors\n")
    for s in g.inputs:
        out.write(f"input  {s.name} {'x'.join(map(str, shapes[s.name]))}\n")
    for t in g.outputs:
        out.write(f"output {t} {'x'.join(map(str, shapes[t]))}\n")
    for n in g.nodes:
        out.write(f"  {n.id:<40} {n.op:<17} {'x'.join(map(str, shapes[n.outputs[0]]))}\n")
    return 0


def cmd_groups(args, out):
    g = _load(args)
    groups = build_groups(g)
    if args.json:
        out.write(
            _dump(
                [
                    {
                        "group_id": grp.group_id,
                        "kind": grp.kind,
                        "size": grp.size,
                        "producer_signature": list(grp.producer_signature),
                        "representative": grp.representative,
                    }
                    for grp in groups
                ]
            )
        )
    else:
        out.write(f"{'id':>4} {'kind':<15} {'size':>5}  producers\n")
        for grp in groups:
            out.write(f"{grp.group_id:>4} {grp.kind:<15} {grp.size:>5}  {', '.join(grp.producer_signature)}\n")
    if args.dot:
        Path(args.dot).write_text(groups_to_dot(groups, g))
    return 0


def cmd_prune(args, out):
    g = _load(args)
    overrides = None
    if args.config:
        cfg = json.loads(Path(args.config).read_text())
        overrides = cfg.get("overrides", {})
    source = {"manifest_sha256": _sha256(args.model)}
    if args.strategy == "oneshot":
        if args.sparsity is None:
            raise UsageError("--sparsity is required for --strategy oneshot")
        groups = build_groups(g)
        plan = plan_oneshot(g, groups, args.heuristic, args.sparsity, args.cap, overrides, args.aggregate)
        pruned = apply_plan(g, plan, groups)
        audit = {"source": source, "plan": plan.to_json()}
    else:
        if args.step is None or args.rounds is None:
            raise UsageError("--step and --rounds are required for --strategy iterative")
        result = plan_iterative(g, args.heuristic, args.step, args.rounds, args.cap, args.recompute, overrides, args.aggregate)
        pruned = result.graph
        audit = {
            "source": source,
            "step": args.step,
            "rounds": args.rounds,
            "recompute": args.recompute,
            "round_plans": [p.to_json() for p in result.rounds],
            "cumulative": result.cumulative.to_json(),
        }
    mp, wp = write_model(pruned, args.out)
    Path(f"{args.out}.plan.json").write_text(_dump(audit))
    out.write(f"wrote {mp} {wp} {args.out}.plan.json\n")
    return 0


def cmd_report(args, out):
    before = _sha256(args.model)
    g = _load(args)
    if args.latency and args.input is None:
        raise UsageError("--latency needs --input NxCxHxW")
    if args.reps < 3 or args.warmup < 1:
        raise UsageError("--reps must be >= 3 and --warmup >= 1")
    lat = measure_latency(g, args.input, args.reps, args.warmup, args.seed) if args.latency else None
    rep = cost_report(g, args.input, lat)
    if _sha256(args.model) != before:
        raise PruneError("model file changed while reporting")
    if args.json:
        out.write(_dump(rep.to_json()))
        return 0
    out.write(f"model {g.name}\n")
    out.write(f"  params            {rep.total_params:,} ({rep.total_params / 1e6:.3f} M)\n")
    out.write(f"  trainable params  {rep.trainable_params:,}\n")
    out.write(f"  model bytes       {rep.model_bytes:,}\n")
    if rep.total_flops is not None:
        out.write(f"  FLOPs @ {'x'.join(map(str, rep.input_shape))}  {rep.total_flops:,}\n")
    if lat is not None:
        out.write(f"  latency median/min/mean ms  {lat.median_ms:.3f} / {lat.min_ms:.3f} / {lat.mean_ms:.3f}\n")
    return 0


def cmd_verify(args, out):
    a = read_model(args.a)
    b = read_model(args.b)
    if set(a.outputs) != set(b.outputs):
        raise PruneError(f"output names differ: {sorted(a.outputs)} vs {sorted(b.outputs)}")
    rng = np.random.default_rng(args.seed)
    shape = args.input or a.inputs[0].shape
    worst = 0.0
    for _ in range(args.trials):
        feed = {s.name: rng.standard_normal(tuple(shape)).astype(np.float32) for s in a.inputs}
        ya, yb = run(a, feed), run(b, feed)
        for t in a.outputs:
            scale = max(float(np.abs(ya[t]).max()), 1e-12)
            worst = max(worst, float(np.abs(ya[t] - yb[t]).max()) / scale)
    ok = worst <= args.rtol
    out.write(_dump({"max_rel_dev": worst, "rtol": args.rtol, "trials": args.trials, "pass": ok}))
    return 0 if ok else 1


def cmd_zoo(args, out):
    builder = zoo.ARCHS.get(args.arch)
    if builder is None:
        raise UsageError(f"unknown arch {args.arch!r}; choose from {sorted(zoo.ARCHS)}")
    kw = {"width_mult": args.width_mult, "seed": args.seed}
    if args.classes is not None:
        kw["classes"] = args.classes
    g = builder(**kw)
    mp, wp = write_model(g, args.out)
    out.write(f"wrote {mp} {wp}\n")
    return 0


def cmd_pq(args, out):
    pred, gt = read_instance_map(args.pred), read_instance_map(args.gt)
    if args.classes:
        res = mean_over_classes([(pred, gt)])
        res["per_class"] = {str(k): v for k, v in res["per_class"].items()}
    else:
        m = match_instances(pred, gt)
        res = compute_pq(m)
        res.update(tp=m.tp, fp=len(m.fp), fn=len(m.fn))
    out.write(json.dumps(res, sort_keys=True) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    seed = _default_seed()
    p = _Parser(prog="prunec", description="Structural filter pruning for CNN graphs.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def model_args(sp):
        sp.add_argument("model", help="manifest JSON")
        sp.add_argument("weights", nargs="?", help="weight blob (default: manifest with .bin suffix)")

    sp = sub.add_parser("inspect", help="summary and per-node shapes")
    model_args(sp)
    sp.add_argument("--input", type=_shape)
    sp.set_defaults(func=cmd_inspect)

    sp = sub.add_parser("groups", help="channel dependency groups")
    model_args(sp)
    sp.add_argument("--dot", metavar="FILE")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_groups)

    sp = sub.add_parser("prune", help="score, plan, rewrite and save")
    model_args(sp)
    sp.add_argument("--heuristic", default="l1", choices=["l1", "l2", "bn", "bn_slim"])
    sp.add_argument("--aggregate", default="representative", choices=["representative", "sum"])
    sp.add_argument("--strategy", default="oneshot", choices=["oneshot", "iterative"])
    sp.add_argument("--sparsity", type=float)
    sp.add_argument("--step", type=float)
    sp.add_argument("--rounds", type=int)
    sp.add_argument("--cap", type=float)
    sp.add_argument("--recompute", type=_bool, default=True)
    sp.add_argument("--config", help="JSON with per-group sparsity overrides")
    sp.add_argument("--out", required=True, help="output prefix")
    sp.set_defaults(func=cmd_prune)

    sp = sub.add_parser("report", help="parameters, FLOPs and latency")
    model_args(sp)
    sp.add_argument("--input", type=_shape)
    sp.add_argument("--latency", action="store_true")
    sp.add_argument("--reps", type=int, default=20)
    sp.add_argument("--warmup", type=int, default=3)
    sp.add_argument("--seed", type=int, default=seed)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("verify", help="compare two models on seeded random inputs")
    sp.add_argument("a")
    sp.add_argument("b")
    sp.add_argument("--input", type=_shape)
    sp.add_argument("--rtol", type=float, default=1e-5)
    sp.add_argument("--trials", type=int, default=3)
    sp.add_argument("--seed", type=int, default=seed)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("zoo", help="emit a seeded reference model")
    sp.add_argument("arch", help=f"one of {sorted(zoo.ARCHS)}")
    sp.add_argument("--classes", type=int)
    sp.add_argument("--width-mult", type=float, default=1.0)
    sp.add_argument("--seed", type=int, default=seed)
    sp.add_argument("--out", required=True, help="output prefix")
    sp.set_defaults(func=cmd_zoo)

    sp = sub.add_parser("pq", help="DQ/SQ/PQ between two instance maps")
    sp.add_argument("pred")
    sp.add_argument("gt")
    sp.add_argument("--classes", action="store_true")
    sp.set_defaults(func=cmd_pq)
    return p


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        return args.func(args, out)
    except PruneError as exc:
        err.write(f"{exc.code}: {exc}\n")
        return exc.exit_code
    except argparse.ArgumentTypeError as exc:
        err.write(f"usage_error: {exc}\n")
        return 2
    except (OSError, json.JSONDecodeError) as exc:
        err.write(f"io_error: {exc}\n")
        return 3


if __name__ == "__main__":
    sys.exit(main())
