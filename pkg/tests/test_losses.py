import math

import numpy as np
import pytest

from stftdet.losses import focal_loss, iou_loss, l1_loss, total_loss
from stftdet.tensor import Tensor, grad_check


def test_focal_perfect_prediction():
    assert float(focal_loss(np.array([1 - 1e-6]), np.array([1.0])).data) == pytest.approx(0, abs=1e-12)


def test_focal_direct_formula():
    expect = 0.25 * 0.25 * -math.log(0.5)
    assert float(focal_loss(np.array([0.5]), np.array([1.0])).data) == pytest.approx(expect, rel=1e-6)
    assert expect == pytest.approx(0.0433, abs=1e-4)


def test_focal_negative_term():
    p = 0.3
    expect = 0.75 * p ** 2 * -math.log(1 - p)
    assert float(focal_loss(np.array([p]), np.array([0.0])).data) == pytest.approx(expect, rel=1e-6)


def test_focal_gradient(rng):
    p = rng.uniform(0.05, 0.95, size=15)
    y = (rng.random(15) < 0.4).astype(float)
    assert grad_check(lambda t: focal_loss(t, y), p) < 1e-3


def test_iou_loss_zero_when_equal(rng):
    g = rng.uniform(1, 5, size=(6, 4))
    assert float(iou_loss(g, g, np.ones(6, bool)).data) == pytest.approx(0, abs=1e-12)


def test_iou_loss_one_over_e():
    # prediction inside the target with area ratio 1/e
    side = math.sqrt(1 / math.e)
    pred = np.array([[side / 2, side / 2, side / 2, side / 2]])
    target = np.array([[0.5, 0.5, 0.5, 0.5]])
    assert float(iou_loss(pred, target, [True]).data) == pytest.approx(1.0, rel=1e-9)


def test_iou_loss_gradient_and_mask(rng):
    pred = rng.uniform(0.5, 4, size=(8, 4))
    target = rng.uniform(0.5, 4, size=(8, 4))
    pred = np.where(np.abs(pred - target) < 0.05, pred + 0.1, pred)
    mask = np.array([1, 0, 1, 1, 0, 1, 1, 0], bool)
    assert grad_check(lambda t: iou_loss(t, target, mask), pred) < 1e-3
    # masked-out rows do not move the loss
    moved = pred.copy()
    moved[1] += 10
    assert float(iou_loss(moved, target, mask).data) == float(iou_loss(pred, target, mask).data)
    assert float(iou_loss(pred, target, np.zeros(8, bool)).data) == 0.0


def test_l1_cases(rng):
    t = rng.normal(size=(5, 4))
    assert float(l1_loss(t, t, np.ones((5, 1), bool)).data) == 0.0
    signs = rng.choice([-1.0, 1.0], size=(5, 4))
    assert float(l1_loss(t + signs, t, np.ones((5, 1), bool)).data) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        l1_loss(t, t, np.ones((5, 1), bool), reduction="median")


def test_l1_gradient_sign_pattern(rng):
    t = rng.normal(size=(6, 4))
    diff = rng.choice([-1, 1], size=(6, 4)) * rng.uniform(0.1, 1, size=(6, 4))
    x = Tensor(t + diff, requires_grad=True)
    l1_loss(x, t, np.ones((6, 1), bool)).backward()
    np.testing.assert_allclose(x.grad, np.sign(diff) / 24)
    assert grad_check(lambda z: l1_loss(z, t, np.ones((6, 1), bool)), t + diff) < 1e-3


def fixture(rng, n=30, pos_static=6, pos_temporal=4):
    s_lab = np.zeros(n)
    s_lab[:pos_static] = 1
    t_lab = np.zeros(n)
    t_lab[:pos_temporal] = 1
    return {"static_label": s_lab, "static_target": rng.uniform(1, 4, size=(n, 4)),
            "temporal_label": t_lab, "temporal_target": rng.normal(size=(n, 4))}


def test_total_is_component_sum(rng):
    tg = fixture(rng)
    rep = total_loss(Tensor(rng.uniform(0.05, 0.95, 30)), Tensor(rng.uniform(1, 4, (30, 4))),
                     Tensor(rng.uniform(0.05, 0.95, 30)), Tensor(rng.normal(size=(30, 4))), tg)
    assert rep.N_pos == 4
    assert rep.total == pytest.approx(rep.recomputed_total(), abs=1e-6)
    assert float(rep.tensor.data) == pytest.approx(rep.total)


def test_total_without_temporal_positives(rng):
    tg = fixture(rng, pos_temporal=0)
    rep = total_loss(Tensor(rng.uniform(0.05, 0.95, 30)), Tensor(rng.uniform(1, 4, (30, 4))),
                     Tensor(rng.uniform(0.05, 0.95, 30)), Tensor(rng.normal(size=(30, 4))), tg)
    assert rep.N_pos == 0 and rep.L_reg_st == 0
    assert rep.total == pytest.approx(rep.L_cls + rep.L_reg + rep.L_cls_st, rel=1e-6)


def test_total_near_zero_for_perfect_predictions(rng):
    tg = fixture(rng)
    eps = 1e-6
    static = np.where(tg["static_label"] > 0, 1 - eps, eps)
    offs = np.where(tg["temporal_label"] > 0, 1 - eps, eps)
    rep = total_loss(Tensor(static), Tensor(tg["static_target"]), Tensor(offs),
                     Tensor(tg["temporal_target"]), tg)
    assert rep.total == pytest.approx(0, abs=1e-6)


def test_static_only_baseline(rng):
    tg = fixture(rng)
    rep = total_loss(Tensor(rng.uniform(0.05, 0.95, 30)), Tensor(rng.uniform(1, 4, (30, 4))),
                     None, None, tg)
    assert rep.L_cls_st == 0 and rep.total == pytest.approx(rep.L_cls + rep.L_reg, rel=1e-6)
