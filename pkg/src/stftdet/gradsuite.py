"""Finite-difference checks for every differentiable op of the detector.

Each check draws a small random instance, reduces the op's output to a
scalar through a fixed random projection (so that, e.g., softmax rows do
not sum to a constant) and compares tape and finite-difference gradients
for every differentiable input.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .losses import focal_loss, iou_loss, l1_loss
from .spatial import deform_conv
from .temporal import channel_aware_aggregate
from .tensor import (
    Tensor,
    bilinear_sample,
    conv2d,
    directional_grad_check,
    grad_check,
    group_norm,
    matmul,
    mul,
    softmax,
    sum_,
)

TOLERANCE = 1e-3
F32 = np.float32


def _wrt(build: Callable[[list], Tensor], args: list, index: int) -> Callable[[Tensor], Tensor]:
    def f(x: Tensor) -> Tensor:
        a = [Tensor(v) for v in args]
        a[index] = x
        return build(a)
    return f


def _check_all(build: Callable[[list], Tensor], args: list, which) -> float:
    return max(grad_check(_wrt(build, args, i), args[i]) for i in which)


def check_conv2d(rng):
    stride = int(rng.integers(1, 3))
    k = int(rng.choice([1, 3]))
    args = [rng.normal(size=(2, 3, 6, 6)), rng.normal(size=(4, 3, k, k)), rng.normal(size=4)]
    args = [a.astype(F32) for a in args]
    proj = rng.normal(size=(2, 4, 6 // stride, 6 // stride)).astype(F32)
    build = lambda a: sum_(mul(conv2d(a[0], a[1], a[2], stride=stride), Tensor(proj)))
    return _check_all(build, args, range(3))


def check_matmul(rng):
    args = [rng.normal(size=(2, 3, 4)).astype(F32), rng.normal(size=(2, 4, 5)).astype(F32)]
    proj = rng.normal(size=(2, 3, 5)).astype(F32)
    build = lambda a: sum_(mul(matmul(a[0], a[1]), Tensor(proj)))
    return _check_all(build, args, range(2))


def check_softmax(rng):
    args = [(2 * rng.normal(size=(3, 7))).astype(F32)]
    proj = rng.normal(size=(3, 7)).astype(F32)
    build = lambda a: sum_(mul(softmax(a[0], axis=-1), Tensor(proj)))
    return _check_all(build, args, [0])


def check_bilinear(rng):
    feat = rng.normal(size=(3, 5, 6)).astype(F32)
    ys = rng.uniform(-1.5, 5.5, size=(4, 3)).astype(F32)
    xs = rng.uniform(-1.5, 6.5, size=(4, 3)).astype(F32)
    proj = rng.normal(size=(3, 4, 3)).astype(F32)
    build = lambda a: sum_(mul(bilinear_sample(a[0], a[1], a[2]), Tensor(proj)))
    return _check_all(build, [feat, ys, xs], range(3))


def check_deform_conv(rng):
    feat = rng.normal(size=(2, 3, 5, 5)).astype(F32)
    offs = rng.uniform(-1.5, 1.5, size=(2, 18, 5, 5)).astype(F32)
    w = rng.normal(size=(4, 3, 3, 3)).astype(F32)
    b = rng.normal(size=4).astype(F32)
    proj = rng.normal(size=(2, 4, 5, 5)).astype(F32)
    build = lambda a: sum_(mul(deform_conv(a[0], a[1], a[2], a[3]), Tensor(proj)))
    return _check_all(build, [feat, offs, w, b], range(4))


def check_channel_aware(rng):
    args = [rng.normal(size=(3, 4, 4)).astype(F32) for _ in range(3)]
    proj = rng.normal(size=(3, 4, 4)).astype(F32)
    build = lambda a: sum_(mul(channel_aware_aggregate(a[0], a[1:]), Tensor(proj)))
    return _check_all(build, args, range(3))


def check_group_norm(rng):
    args = [rng.normal(size=(2, 6, 3, 3)), rng.normal(size=6), rng.normal(size=6)]
    args = [a.astype(F32) for a in args]
    proj = rng.normal(size=(2, 6, 3, 3)).astype(F32)
    build = lambda a: sum_(mul(group_norm(a[0], 3, a[1], a[2]), Tensor(proj)))
    return _check_all(build, args, range(3))


def check_focal(rng):
    p = rng.uniform(0.05, 0.95, size=20).astype(F32)
    y = (rng.random(20) < 0.3).astype(F32)
    return grad_check(lambda x: focal_loss(x, y), p)


def check_iou_loss(rng):
    pred = rng.uniform(0.5, 4.0, size=(12, 4)).astype(F32)
    target = rng.uniform(0.5, 4.0, size=(12, 4))
    mask = rng.random(12) < 0.7
    mask[0] = True
    # keep every overlap strictly inside the min() branches
    pred = np.where(np.abs(pred - target) < 0.05, pred + 0.1, pred).astype(F32)
    return grad_check(lambda x: iou_loss(x, target, mask), pred)


def check_l1(rng):
    target = rng.normal(size=(10, 4))
    pred = (target + rng.choice([-1, 1], size=(10, 4)) * rng.uniform(0.05, 1, size=(10, 4))).astype(F32)
    mask = (rng.random(10) < 0.6)[:, None]
    mask[0] = True
    return grad_check(lambda x: l1_loss(x, target, mask, reduction="sum"), pred)


def check_forward_stft(rng):
    from .pipeline.stft import ModelState, forward_stft

    state = ModelState.create("e", seed=int(rng.integers(1 << 31)))
    # exercise the guided offsets (zero-initialized in a fresh model)
    for xf in state.temporal.target_xform + state.temporal.support_xform:
        xf.offset_conv.weight.data = rng.normal(0, 0.2, size=xf.offset_conv.weight.shape).astype(F32)
        xf.offset_conv.bias.data = rng.uniform(0.2, 0.8, size=xf.offset_conv.bias.shape).astype(F32)
    clip = rng.random(size=(3, 3, 16, 16)).astype(F32)
    projs = None

    def f(x: Tensor) -> Tensor:
        nonlocal projs
        target = x[0:1]
        supports = x[1:][None]
        preds = forward_stft(state, target, supports, detach_guidance=False)
        outs = []
        for p in preds:
            outs += [p.static_logits, p.proposals, p.offset_logits, p.deltas]
        if projs is None:
            projs = [Tensor(rng.normal(size=o.shape).astype(F32)) for o in outs]
        total = None
        for o, r in zip(outs, projs):
            term = sum_(mul(o, r))
            total = term if total is None else total + term
        return total

    return directional_grad_check(f, clip, directions=4, seed=int(rng.integers(1 << 31)))


CHECKS = {
    "conv2d": check_conv2d,
    "matmul": check_matmul,
    "softmax": check_softmax,
    "bilinear_sample": check_bilinear,
    "deform_conv": check_deform_conv,
    "channel_aware_aggregate": check_channel_aware,
    "group_norm": check_group_norm,
    "focal_loss": check_focal,
    "iou_loss": check_iou_loss,
    "l1_loss": check_l1,
    "forward_stft": check_forward_stft,
}


@dataclass
class CheckResult:
    op: str
    errors: list
    seconds: float

    @property
    def max_error(self) -> float:
        return max(self.errors)

    @property
    def passed(self) -> bool:
        return self.max_error < TOLERANCE


def run_suite(ops=None, instances: int = 3, seed: int = 0) -> list[CheckResult]:
    names = list(CHECKS) if ops in (None, "all", ["all"]) else list(ops)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise KeyError(f"unknown ops {unknown}; choose from {list(CHECKS)}")
    results = []
    for k, name in enumerate(names):
        rng = np.random.default_rng([seed, k])
        t0 = time.perf_counter()
        errs = [CHECKS[name](rng) for _ in range(instances)]
        results.append(CheckResult(name, errs, time.perf_counter() - t0))
    return results


def format_results(results: list[CheckResult]) -> str:
    lines = [f"{'op':<26}{'max rel err':>14}{'seconds':>10}  status"]
    for r in results:
        lines.append(f"{r.op:<26}{r.max_error:>14.3e}{r.seconds:>10.2f}  "
                     f"{'ok' if r.passed else 'FAIL'}")
    return "\n".join(lines)
