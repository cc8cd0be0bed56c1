import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from prunec import zoo  # noqa: E402
from prunec.depgraph import BN, PRODUCER_ROLES  # noqa: E402
from prunec.planner import GroupPlan, PrunePlan  # noqa: E402
from prunec.rewriter import plan_fingerprint  # noqa: E402


def chain_model(seed=0, widths=(8, 4), hw=8):
    """input -> conv(8) -> bn -> relu -> conv(4) -> output."""
    b = zoo.GraphBuilder("chain", seed)
    x = b.input("x", (1, 3, hw, hw))
    h = b.conv("conv1", x, widths[0], 3)
    h = b.bn("bn1", h)
    h = b.relu("relu1", h)
    y = b.conv("conv2", h, widths[1], 3)
    return b.build([y])


def manual_plan(g, groups, removals):
    """PrunePlan removing ``removals[group_id]`` class indices."""
    plans = []
    for grp in groups:
        removed = tuple(sorted(removals.get(grp.group_id, ())))
        plans.append(GroupPlan(grp.group_id, grp.producer_signature, grp.kind, grp.size, 0.0, removed))
    return PrunePlan(plan_fingerprint(g, groups), tuple(plans), "manual")


def silence_class(g, group, cls_idx):
    """Zero the class's batchnorm gamma/beta; zero producer weights where no BN follows them."""
    weights = {k: np.array(v) for k, v in g.weights.items()}
    consumers = g.consumers()
    cls = group.classes[cls_idx]
    for m in cls.loci(BN):
        n = g.node(m.node)
        weights[n.weights["gamma"]][m.index] = 0
        weights[n.weights["beta"]][m.index] = 0
    for m in cls.members:
        if m.role not in PRODUCER_ROLES:
            continue
        n = g.node(m.node)
        if any(c.op == "batchnorm2d" for c in consumers.get(n.outputs[0], ())):
            continue
        weights[n.weights["weight"]][m.index] = 0
        if "bias" in n.weights:
            weights[n.weights["bias"]][m.index] = 0
    return g.replace(weights=weights)


@pytest.fixture(scope="session")
def resnet18():
    return zoo.build_resnet18()


@pytest.fixture(scope="session")
def hovernet():
    return zoo.build_unet_hovernet()


@pytest.fixture
def chain():
    return chain_model()


def small_zoo():
    """Zoo models at reduced resolution for execution-heavy tests."""
    return {
        "plain": zoo.build_plain_cnn([8, 12, 6], 5, (1, 3, 16, 16), seed=1),
        "resnet18": zoo.build_resnet18(10, 0.125, (1, 3, 32, 32), seed=2),
        "preact": zoo.build_preact_resnet_encoder((8, 16, 16, 32), 2, 4, (1, 3, 32, 32), seed=3).graph,
        "hovernet": zoo.build_unet_hovernet((8, 16, 16, 32), 2, (16, 8, 8), 5, (1, 3, 32, 32), seed=4),
    }


@pytest.fixture(scope="session")
def small_models():
    return small_zoo()


def random_topology(rng, kind):
    """Small random graph of the given family: chain, residual or skip-concat."""
    b = zoo.GraphBuilder(f"rand_{kind}", int(rng.integers(2**31)))
    use_bn = bool(rng.integers(2))
    w = lambda: int(rng.integers(3, 9))  # noqa: E731

    def block(prefix, x, out):
        h = b.conv(f"{prefix}.conv", x, out, 3, bias=not use_bn)
        if use_bn:
            h = b.bn(f"{prefix}.bn", h)
        return b.relu(f"{prefix}.relu", h)

    x = b.input("x", (1, 3, 8, 8))
    if kind == "chain":
        h = x
        for i in range(int(rng.integers(2, 5))):
            h = block(f"l{i}", h, w())
    elif kind == "residual":
        c = w()
        h = block("stem", x, c)
        for i in range(int(rng.integers(1, 4))):
            r = block(f"r{i}a", h, w())
            r = block(f"r{i}b", r, c)
            h = b.add(f"r{i}.add", h, r)
    elif kind == "skip-concat":
        e = block("enc", x, w())
        d = block("deep", b.maxpool("pool", e, 2), w())
        h = b.concat("cat", b.upsample("up", d), e)
        h = block("dec", h, w())
    else:
        raise ValueError(kind)
    y = b.conv("head", h, 2, 1, bias=True)
    return b.build([y])


def random_map_pair(rng, size=24, n_classes=None):
    """Ground truth of random rectangles and a jittered, partly dropped prediction."""
    from prunec.segmetrics import InstanceMap

    gt = np.zeros((size, size), np.int64)
    pred = np.zeros((size, size), np.int64)
    gt_cls, pred_cls = {}, {}
    next_pred = 100
    for inst in range(1, int(rng.integers(1, 8)) + 1):
        y, x = rng.integers(0, size - 3, 2)
        h, w = rng.integers(2, 8, 2)
        gt[y : y + h, x : x + w] = inst
        cls = int(rng.integers(n_classes)) if n_classes else 0
        gt_cls[inst] = cls
        if rng.random() < 0.8:
            dy, dx = rng.integers(-2, 3, 2)
            yy, xx = max(0, y + dy), max(0, x + dx)
            pred[yy : yy + h, xx : xx + w] = next_pred
            pred_cls[next_pred] = cls if rng.random() < 0.9 or not n_classes else int(rng.integers(n_classes))
            next_pred += 1
    for _ in range(int(rng.integers(0, 3))):
        y, x = rng.integers(0, size - 2, 2)
        pred[y : y + 3, x : x + 3] = next_pred
        pred_cls[next_pred] = int(rng.integers(n_classes)) if n_classes else 0
        next_pred += 1

    def labels(ids, table):
        present = set(np.unique(ids).tolist()) - {0}
        return {i: c for i, c in table.items() if i in present} if n_classes else None

    return InstanceMap(pred, labels(pred, pred_cls)), InstanceMap(gt, labels(gt, gt_cls))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
        terminalreporter.write_line(line)
