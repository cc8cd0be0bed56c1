"""Reference forward interpreter.

Kernels are plain numpy with a fixed accumulation order: convolutions sum
input-channel-major, then over kernel rows, then kernel columns, one
multiply-add pass per step, so a given graph and input give bit-identical
float32 results on every run.  Nothing is reassociated for speed.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import NonFiniteValue, ShapeMismatch, Unsupported
from .graph import ModelGraph, Node, shape_check

F32 = np.float32


def conv2d(x, w, b=None, stride=1, padding=0):
    n, c, h, wd = x.shape
    o, i, kh, kw = w.shape
    if c != i:
        raise ShapeMismatch(f"conv2d: input has {c} channels, weight expects {i}")
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, o, ho, wo), dtype=F32)
    tmp = np.empty_like(out)
    for ci in range(c):
        for r in range(kh):
            for s in range(kw):
                patch = x[:, ci, r : r + stride * (ho - 1) + 1 : stride, s : s + stride * (wo - 1) + 1 : stride]
                np.multiply(w[:, ci, r, s][None, :, None, None], patch[:, None], out=tmp)
                np.add(out, tmp, out=out)
    if b is not None:
        out += b[None, :, None, None]
    return out


def batchnorm2d(x, gamma, beta, mean, var, eps=1e-5):
    scale = (gamma / np.sqrt(var + F32(eps))).astype(F32)
    return ((x - mean[None, :, None, None]) * scale[None, :, None, None] + beta[None, :, None, None]).astype(F32)


def relu(x):
    return np.maximum(x, F32(0))


def add(*xs):
    out = xs[0].copy()
    for x in xs[1:]:
        out += x
    return out


def concat(*xs):
    return np.concatenate(xs, axis=1)


def maxpool2d(x, kernel, stride=None, padding=0):
    stride = stride or kernel
    n, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=-np.inf)
    ho = (h + 2 * padding - kernel) // stride + 1
    wo = (w + 2 * padding - kernel) // stride + 1
    out = np.full((n, c, ho, wo), -np.inf, dtype=F32)
    for r in range(kernel):
        for s in range(kernel):
            np.maximum(out, x[:, :, r : r + stride * (ho - 1) + 1 : stride, s : s + stride * (wo - 1) + 1 : stride], out=out)
    return out


def global_avg_pool(x):
    return x.mean(axis=(2, 3), keepdims=True, dtype=F32)


def upsample_nearest(x, scale):
    return x.repeat(scale, axis=2).repeat(scale, axis=3)


def dense(x, w, b=None):
    n, c, h, wd = x.shape
    if h * wd != 1:
        raise ShapeMismatch("dense expects 1x1 spatial input")
    feats = x.reshape(n, c)
    out = np.zeros((n, w.shape[0]), dtype=F32)
    for j in range(c):
        out += feats[:, j : j + 1] * w[:, j][None, :]
    if b is not None:
        out += b[None, :]
    return out.reshape(n, -1, 1, 1)


def softmax(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _eval(g: ModelGraph, n: Node, args):
    op = n.op
    if op == "conv2d":
        return conv2d(args[0], g.weight(n, "weight"), g.weight(n, "bias"), int(n.attr("stride")), int(n.attr("padding")))
    if op == "batchnorm2d":
        return batchnorm2d(
            args[0],
            g.weight(n, "gamma"),
            g.weight(n, "beta"),
            g.weight(n, "running_mean"),
            g.weight(n, "running_var"),
            n.attr("epsilon"),
        )
    if op == "relu":
        return relu(args[0])
    if op == "add":
        return add(*args)
    if op == "concat":
        return concat(*args)
    if op == "maxpool2d":
        return maxpool2d(args[0], int(n.attr("kernel")), n.attr("stride"), int(n.attr("padding") or 0))
    if op == "global_avg_pool":
        return global_avg_pool(args[0])
    if op == "upsample_nearest":
        return upsample_nearest(args[0], int(n.attr("scale")))
    if op == "dense":
        return dense(args[0], g.weight(n, "weight"), g.weight(n, "bias"))
    if op == "softmax":
        return softmax(args[0])
    raise Unsupported(f"node {n.id!r}: no kernel for op {op!r}")


def run(g: ModelGraph, inputs: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Execute the graph and return every model output by name."""
    expected = {s.name for s in g.inputs}
    if set(inputs) != expected:
        raise ShapeMismatch(f"expected inputs {sorted(expected)}, got {sorted(inputs)}")
    shape_check(g, {k: np.shape(v) for k, v in inputs.items()})

    last_use = {}
    for i, n in enumerate(g.nodes):
        for t in n.inputs:
            last_use[t] = i
    keep = set(g.outputs)

    values: dict[str, np.ndarray] = {}
    for i, n in enumerate(g.nodes):
        if n.op == "input":
            values[n.outputs[0]] = np.ascontiguousarray(inputs[n.outputs[0]], dtype=F32)
            continue
        out = _eval(g, n, [values[t] for t in n.inputs])
        if not np.isfinite(out).all():
            raise NonFiniteValue(f"node {n.id!r} produced NaN or Inf")
        values[n.outputs[0]] = out
        for t in n.inputs:
            if last_use.get(t) == i and t not in keep:
                values.pop(t, None)
    return {t: values[t] for t in g.outputs}


def random_inputs(g: ModelGraph, seed: int = 42, shapes: Mapping[str, tuple] | None = None) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    shapes = dict(shapes or {})
    return {
        s.name: rng.standard_normal(tuple(shapes.get(s.name, s.shape))).astype(F32)
        for s in g.inputs
    }


@dataclass(frozen=True)
class LatencyStats:
    median_ms: float
    min_ms: float
    mean_ms: float
    samples_ms: tuple[float, ...]


def measure_latency(g: ModelGraph, input_shape=None, reps: int = 20, warmup: int = 3, seed: int = 42) -> LatencyStats:
    """Time ``reps`` single forward passes after ``warmup`` unrecorded ones."""
    if reps < 3 or warmup < 1:
        raise ValueError("measure_latency needs reps >= 3 and warmup >= 1")
    shapes = None
    if input_shape is not None:
        shapes = {g.inputs[0].name: tuple(input_shape)}
    feed = random_inputs(g, seed, shapes)
    for _ in range(warmup):
        run(g, feed)
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        run(g, feed)
        samples.append((time.perf_counter() - t0) * 1e3)
    return LatencyStats(statistics.median(samples), min(samples), statistics.fmean(samples), tuple(samples))
