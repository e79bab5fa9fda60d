"""Static and temporal detection losses and their multi-task combination."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    NonFiniteError,
    Tensor,
    abs_,
    add,
    as_tensor,
    clamp,
    exp,
    log,
    minimum,
    mul,
    scale,
    sub,
    sum_,
)

FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0
PROB_EPS = 1e-6


def focal_loss(pred_prob: Tensor, labels, alpha: float = FOCAL_ALPHA,
               gamma: float = FOCAL_GAMMA) -> Tensor:
    """Summed binary focal loss on probabilities (clamped to ``[1e-6, 1-1e-6]``)."""
    p = clamp(as_tensor(pred_prob), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(labels, dtype=p.dtype)
    if y.shape != p.shape:
        y = np.broadcast_to(y, p.shape)
    one = p.dtype.type(1.0)
    q = sub(one, p)
    pos = mul(mul(_power(q, gamma), log(p)), Tensor((-alpha * y).astype(p.dtype)))
    neg = mul(mul(_power(p, gamma), log(q)), Tensor((-(1 - alpha) * (1 - y)).astype(p.dtype)))
    return sum_(add(pos, neg))


def _power(x: Tensor, gamma: float) -> Tensor:
    if gamma == 2.0:
        return mul(x, x)
    return exp(scale(log(x), gamma))


def _ltrb_iou(pred: Tensor, target: Tensor) -> Tensor:
    """IoU of boxes sharing an anchor point, from ``[..., 4]`` distance vectors."""
    pl, pt, pr, pb = (pred[..., i] for i in range(4))
    tl, tt, tr, tb = (target[..., i] for i in range(4))
    pred_area = mul(add(pl, pr), add(pt, pb))
    target_area = mul(add(tl, tr), add(tt, tb))
    iw = add(minimum(pl, tl), minimum(pr, tr))
    ih = add(minimum(pt, tt), minimum(pb, tb))
    inter = mul(iw, ih)
    union = sub(add(pred_area, target_area), inter)
    return inter / union


def iou_loss(pred_g: Tensor, target_g, mask) -> Tensor:
    """Mean of ``-ln IoU`` over masked locations; fields are ``[..., 4]``."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return Tensor(np.zeros((), dtype=np.float32))
    idx = np.nonzero(mask)
    pred = as_tensor(pred_g)[idx]
    target = Tensor(np.asarray(target_g, dtype=pred.dtype)[idx])
    ious = clamp(_ltrb_iou(pred, target), PROB_EPS, None)
    return scale(sum_(-log(ious)), 1.0 / len(idx[0]))


def l1_loss(pred: Tensor, target, mask, reduction: str = "mean") -> Tensor:
    """Absolute error over masked entries (mask broadcasts over ``pred``)."""
    pred = as_tensor(pred)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), pred.shape)
    n = int(mask.sum())
    if n == 0:
        return Tensor(np.zeros((), dtype=pred.dtype))
    diff = abs_(sub(pred, Tensor(np.asarray(target, dtype=pred.dtype))))
    total = sum_(mul(diff, Tensor(mask.astype(pred.dtype))))
    if reduction == "sum":
        return total
    if reduction == "mean":
        return scale(total, 1.0 / n)
    raise ValueError(f"unknown reduction {reduction!r}")


@dataclass
class LossReport:
    L_cls: float
    L_reg: float
    L_cls_st: float
    L_reg_st: float
    total: float
    N_pos: int
    tensor: Tensor | None = None

    def as_dict(self) -> dict:
        return {"L_cls": self.L_cls, "L_reg": self.L_reg, "L_cls_st": self.L_cls_st,
                "L_reg_st": self.L_reg_st, "total": self.total, "N_pos": self.N_pos}

    def recomputed_total(self) -> float:
        return self.L_cls + self.L_reg + (self.L_cls_st + self.L_reg_st) / max(self.N_pos, 1)


def total_loss(static_probs: Tensor, static_ltrb: Tensor, score_offsets: Tensor | None,
               deltas: Tensor | None, targets: dict) -> LossReport:
    """Multi-task loss over flattened locations.

    ``static_probs`` ``[P]``, ``static_ltrb`` ``[P, 4]``, ``score_offsets``
    ``[P]`` and ``deltas`` ``[P, 4]`` (temporal terms may be ``None`` for the
    static baseline).  ``targets`` carries ``static_label``, ``static_target``,
    ``temporal_label`` and ``temporal_target`` arrays aligned to the same
    locations.  Static terms are normalized by the static positive count;
    both temporal terms by the temporal positive count.
    """
    s_lab = np.asarray(targets["static_label"])
    t_lab = np.asarray(targets["temporal_label"])
    n_static = max(int(s_lab.sum()), 1)
    n_pos = int(t_lab.sum())

    l_cls = scale(focal_loss(static_probs, s_lab), 1.0 / n_static)
    l_reg = iou_loss(static_ltrb, targets["static_target"], s_lab > 0)
    total = add(l_cls, l_reg)
    l_cls_st = l_reg_st = None
    if score_offsets is not None:
        l_cls_st = focal_loss(score_offsets, t_lab)
        l_reg_st = l1_loss(deltas, targets["temporal_target"], (t_lab > 0)[..., None], reduction="sum")
        total = add(total, scale(add(l_cls_st, l_reg_st), 1.0 / max(n_pos, 1)))

    report = LossReport(
        L_cls=float(l_cls.data), L_reg=float(l_reg.data),
        L_cls_st=float(l_cls_st.data) if l_cls_st is not None else 0.0,
        L_reg_st=float(l_reg_st.data) if l_reg_st is not None else 0.0,
        total=float(total.data), N_pos=n_pos, tensor=total,
    )
    if not np.isfinite(report.total):
        raise NonFiniteError(f"non-finite loss: {report.as_dict()}")
    return report
