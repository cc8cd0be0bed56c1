"""Independent reference implementations used only by the tests.

Nothing here imports the kernels or matchers under test.
"""

import numpy as np


def naive_conv(x, w, b, stride, pad):
    """float64 conv computed one output pixel at a time."""
    x = np.asarray(x, np.float64)
    w = np.asarray(w, np.float64)
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad : pad + h, pad : pad + wd] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for i in range(ho):
        for j in range(wo):
            win = xp[:, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
            out[:, :, i, j] = np.tensordot(win, w, axes=([1, 2, 3], [1, 2, 3]))
    if b is not None:
        out += np.asarray(b, np.float64)[None, :, None, None]
    return out


def naive_maxpool(x, k, stride, pad):
    n, c, h, w = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    out = np.full((n, c, ho, wo), -np.inf)
    for i in range(ho):
        for j in range(wo):
            for r in range(k):
                for s in range(k):
                    y, z = i * stride + r - pad, j * stride + s - pad
                    if 0 <= y < h and 0 <= z < w:
                        out[:, :, i, j] = np.maximum(out[:, :, i, j], x[:, :, y, z])
    return out


def reference_run(g, inputs):
    """float64 interpreter over a ModelGraph, written independently of prunec.executor."""
    vals = {k: np.asarray(v, np.float64) for k, v in inputs.items()}

    def W(n, role):
        key = n.weights.get(role)
        return None if key is None else np.asarray(g.weights[key], np.float64)

    for n in g.nodes:
        if n.op == "input":
            continue
        a = [vals[t] for t in n.inputs]
        op = n.op
        if op == "conv2d":
            y = naive_conv(a[0], W(n, "weight"), W(n, "bias"), n.attrs["stride"], n.attrs["padding"])
        elif op == "batchnorm2d":
            sh = (1, -1, 1, 1)
            y = W(n, "gamma").reshape(sh) * (a[0] - W(n, "running_mean").reshape(sh)) / np.sqrt(
                W(n, "running_var").reshape(sh) + n.attrs["epsilon"]
            ) + W(n, "beta").reshape(sh)
        elif op == "relu":
            y = np.where(a[0] > 0, a[0], 0.0)
        elif op == "add":
            y = sum(a)
        elif op == "concat":
            y = np.concatenate(a, axis=1)
        elif op == "maxpool2d":
            y = naive_maxpool(a[0], n.attrs["kernel"], n.attrs["stride"], n.attrs["padding"])
        elif op == "global_avg_pool":
            y = a[0].sum(axis=(2, 3), keepdims=True) / (a[0].shape[2] * a[0].shape[3])
        elif op == "upsample_nearest":
            s = n.attrs["scale"]
            y = np.kron(a[0], np.ones((1, 1, s, s)))
        elif op == "dense":
            feats = a[0][:, :, 0, 0]
            y = feats @ W(n, "weight").T
            if "bias" in n.weights:
                y = y + W(n, "bias")
            y = y[:, :, None, None]
        elif op == "softmax":
            e = np.exp(a[0] - a[0].max(axis=1, keepdims=True))
            y = e / e.sum(axis=1, keepdims=True)
        else:
            raise AssertionError(op)
        vals[n.outputs[0]] = y
    return {t: vals[t] for t in g.outputs}


def brute_force_match(pred, gt):
    """Pixel-loop IoU counting; returns {(pred_id, gt_id): iou} for IoU >= 0.5."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    area_p, area_g, inter = {}, {}, {}
    h, w = pred.shape
    for i in range(h):
        for j in range(w):
            p, t = int(pred[i, j]), int(gt[i, j])
            if p:
                area_p[p] = area_p.get(p, 0) + 1
            if t:
                area_g[t] = area_g.get(t, 0) + 1
            if p and t:
                inter[(p, t)] = inter.get((p, t), 0) + 1
    matches = {}
    for (p, t), k in inter.items():
        iou = k / (area_p[p] + area_g[t] - k)
        if iou >= 0.5:
            matches[(p, t)] = iou
    return matches, set(area_p), set(area_g)


def single_pass_pq(tp, fp, fn, ious):
    """PQ written as one fraction: sum(IoU) / (TP + FP/2 + FN/2)."""
    denom = tp + fp / 2 + fn / 2
    return 0.0 if denom == 0 else sum(ious) / denom
