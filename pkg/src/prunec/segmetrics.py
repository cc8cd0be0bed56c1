"""Instance matching and detection/segmentation/panoptic quality.

Instance maps are integer grids (0 = background).  A predicted and a
ground-truth instance are matched when their IoU is at least 0.5.  Above 0.5
a match is necessarily unique; exact 0.5 ties are resolved greedily by
descending IoU, then ascending ids, so no instance is ever paired twice.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, MalformedManifest, MissingClassLabels

IMAP_MAGIC = b"IMAP"
IOU_THRESHOLD = 0.5


@dataclass(frozen=True)
class InstanceMap:
    ids: np.ndarray
    class_of: dict | None = None

    @property
    def height(self) -> int:
        return self.ids.shape[0]

    @property
    def width(self) -> int:
        return self.ids.shape[1]

    def instances(self) -> list[int]:
        return [int(i) for i in np.unique(self.ids) if i != 0]


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple  # (pred id, gt id, iou)
    fp: tuple
    fn: tuple

    @property
    def tp(self) -> int:
        return len(self.pairs)


def match_instances(pred: InstanceMap, gt: InstanceMap) -> MatchResult:
    if pred.ids.shape != gt.ids.shape:
        raise DimensionMismatch(f"prediction {pred.ids.shape} vs ground truth {gt.ids.shape}")
    p = pred.ids.ravel().astype(np.int64)
    t = gt.ids.ravel().astype(np.int64)
    p_ids, p_area = np.unique(p[p > 0], return_counts=True)
    t_ids, t_area = np.unique(t[t > 0], return_counts=True)
    p_area = dict(zip(p_ids.tolist(), p_area.tolist()))
    t_area = dict(zip(t_ids.tolist(), t_area.tolist()))

    both = (p > 0) & (t > 0)
    pairs, inter = np.unique(np.stack([p[both], t[both]]), axis=1, return_counts=True)
    candidates = []
    for (pi, ti), n in zip(pairs.T.tolist(), inter.tolist()):
        iou = n / (p_area[pi] + t_area[ti] - n)
        if iou >= IOU_THRESHOLD:
            candidates.append((-iou, pi, ti))
    candidates.sort()

    used_p, used_t, matched = set(), set(), []
    for neg_iou, pi, ti in candidates:
        if pi in used_p or ti in used_t:
            continue
        used_p.add(pi)
        used_t.add(ti)
        matched.append((pi, ti, -neg_iou))
    matched.sort()
    fp = tuple(i for i in sorted(p_area) if i not in used_p)
    fn = tuple(i for i in sorted(t_area) if i not in used_t)
    return MatchResult(tuple(matched), fp, fn)


def pq_from_counts(tp: int, fp: int, fn: int, iou_sum: float) -> dict:
    denom = tp + 0.5 * fp + 0.5 * fn
    dq = tp / denom if denom else 0.0
    sq = iou_sum / tp if tp else 0.0
    return {"dq": dq, "sq": sq, "pq": dq * sq}


def compute_pq(m: MatchResult) -> dict:
    return pq_from_counts(m.tp, len(m.fp), len(m.fn), sum(iou for _, _, iou in m.pairs))


def _restrict(imap: InstanceMap, cls) -> InstanceMap:
    keep = [i for i, c in imap.class_of.items() if c == cls]
    return InstanceMap(np.where(np.isin(imap.ids, keep), imap.ids, 0))


def mean_over_classes(pairs) -> dict:
    """Pool TP/FP/FN and IoU sums per class over all (pred, gt) pairs, then average.

    Classes without any ground-truth instance are left out of the mean.
    """
    pairs = list(pairs)
    classes = set()
    for pred, gt in pairs:
        for imap in (pred, gt):
            if imap.class_of is None:
                raise MissingClassLabels("class-aware metrics need class labels on every map")
            missing = set(imap.instances()) - set(imap.class_of)
            if missing:
                raise MissingClassLabels(f"instances {sorted(missing)} have no class label")
            classes.update(imap.class_of[i] for i in imap.instances())
    per_class = {}
    for cls in sorted(classes):
        tp = fp = fn = n_gt = 0
        iou_sum = 0.0
        for pred, gt in pairs:
            m = match_instances(_restrict(pred, cls), _restrict(gt, cls))
            tp += m.tp
            fp += len(m.fp)
            fn += len(m.fn)
            n_gt += m.tp + len(m.fn)
            iou_sum += sum(iou for _, _, iou in m.pairs)
        if n_gt:
            per_class[cls] = pq_from_counts(tp, fp, fn, iou_sum)
    if not per_class:
        return {"mdq": 0.0, "msq": 0.0, "mpq": 0.0, "per_class": {}}
    vals = list(per_class.values())
    return {
        "mdq": float(np.mean([v["dq"] for v in vals])),
        "msq": float(np.mean([v["sq"] for v in vals])),
        "mpq": float(np.mean([v["pq"] for v in vals])),
        "per_class": per_class,
    }


# ----------------------------------------------------------------------------
# file formats


def encode_imap(imap: InstanceMap) -> bytes:
    """``IMAP`` + u32 H + u32 W + H*W u32 ids, then optionally u32 count + (id, class) u32 pairs."""
    h, w = imap.ids.shape
    out = [IMAP_MAGIC, struct.pack("<II", h, w), np.ascontiguousarray(imap.ids, dtype="<u4").tobytes()]
    if imap.class_of is not None:
        items = sorted(imap.class_of.items())
        out.append(struct.pack("<I", len(items)))
        out.extend(struct.pack("<II", int(i), int(c)) for i, c in items)
    return b"".join(out)


def decode_imap(data: bytes) -> InstanceMap:
    if data[:4] != IMAP_MAGIC:
        raise MalformedManifest("instance map does not start with b'IMAP'")
    h, w = struct.unpack_from("<II", data, 4)
    end = 12 + 4 * h * w
    if len(data) < end:
        raise MalformedManifest("instance map truncated")
    ids = np.frombuffer(data, dtype="<u4", count=h * w, offset=12).reshape(h, w).astype(np.int64)
    class_of = None
    if len(data) > end:
        (count,) = struct.unpack_from("<I", data, end)
        if len(data) != end + 4 + 8 * count:
            raise MalformedManifest("instance map class table has the wrong length")
        table = np.frombuffer(data, dtype="<u4", count=2 * count, offset=end + 4).reshape(-1, 2)
        class_of = {int(i): int(c) for i, c in table}
    return InstanceMap(ids, class_of)


def read_instance_map(path) -> InstanceMap:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with open(path, newline="") as fh:
            rows = [[int(v) for v in row] for row in csv.reader(fh) if row]
        if not rows or len({len(r) for r in rows}) != 1:
            raise MalformedManifest(f"{path}: CSV grid must be rectangular and non-empty")
        return InstanceMap(np.array(rows, dtype=np.int64))
    return decode_imap(path.read_bytes())


def write_instance_map(imap: InstanceMap, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        np.savetxt(path, imap.ids, fmt="%d", delimiter=",")
    else:
        path.write_bytes(encode_imap(imap))
