import numpy as np
import pytest

from prunec import zoo
from prunec.cost import count_params
from prunec.depgraph import build_groups
from prunec.executor import random_inputs, run
from prunec.graph import save_model, shape_check


@pytest.mark.parametrize("arch", sorted(zoo.ARCHS))
def test_archs_are_valid_and_deterministic(arch):
    a = zoo.ARCHS[arch](classes=4, width_mult=0.25, seed=1)
    b = zoo.ARCHS[arch](classes=4, width_mult=0.25, seed=1)
    assert save_model(a) == save_model(b)
    assert save_model(a) != save_model(zoo.ARCHS[arch](classes=4, width_mult=0.25, seed=2))
    shape_check(a)


def test_resnet18_size(resnet18):
    rep = count_params(resnet18)
    assert rep.total_params == 11_699_112
    assert rep.trainable_params == 11_689_512  # the usual torchvision figure
    assert shape_check(resnet18)["fc"] == (1, 1000, 1, 1)


def test_plain_params_closed_form():
    g = zoo.build_plain_cnn([4, 6], classes=3)
    assert count_params(g).total_params == (3 * 4 * 9 + 16) + (4 * 6 * 9 + 24) + (6 * 3 + 3)
    with pytest.raises(ValueError):
        zoo.build_plain_cnn([])


def test_encoder_taps():
    enc = zoo.build_preact_resnet_encoder((8, 16), 1, 3, (1, 3, 32, 32))
    shapes = shape_check(enc.graph)
    assert [shapes[t][1:] for t in enc.taps] == [(8, 32, 32), (16, 16, 16)]


def test_hovernet_branches(hovernet):
    shapes = shape_check(hovernet)
    assert [shapes[t] for t in hovernet.outputs] == [(1, 2, 64, 64), (1, 2, 64, 64), (1, 6, 64, 64)]


def test_smoke_runs(small_models):
    for g in small_models.values():
        ys = run(g, random_inputs(g))
        assert all(np.isfinite(v).all() for v in ys.values())
        assert all(grp.size >= 1 for grp in build_groups(g))


def test_plain_group_kinds():
    kinds = [grp.kind for grp in build_groups(zoo.build_plain_cnn([8, 4]))]
    assert kinds == ["local", "local", "frozen"]


def test_hovernet_toy_prunes_at_ninety(hovernet):
    from prunec.planner import plan_oneshot
    from prunec.rewriter import apply_plan

    out = apply_plan(hovernet, plan_oneshot(hovernet, None, "l1", 0.9))
    ys = run(out, random_inputs(out))
    assert [v.shape[1] for v in ys.values()] == [2, 2, 6]
