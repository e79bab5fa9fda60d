"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .core import NonFiniteError, Tensor


def numeric_grad(f: Callable[[Tensor], Tensor], x: np.ndarray, eps: float) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x``, one coordinate at a time."""
    x = np.array(x, copy=True)
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = _scalar(f(Tensor(x)))
        flat[i] = orig - eps
        fm = _scalar(f(Tensor(x)))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def _scalar(out: Tensor) -> float:
    val = float(np.asarray(out.data, dtype=np.float64).sum())
    if not np.isfinite(val):
        raise NonFiniteError("f(x) is not finite")
    return val


def max_rel_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float | None = None) -> float:
    """Return the max relative error between tape and finite-difference gradients.

    The tape gradient is computed in the dtype of ``x``.  The finite
    differences are always evaluated in float64: float32 round-off alone
    would put ~1e-4 noise on every difference quotient.
    """
    x = x.data if isinstance(x, Tensor) else np.asarray(x)
    if eps is None:
        eps = 1e-5
    xt = Tensor(x, requires_grad=True)
    out = f(xt)
    if not np.all(np.isfinite(out.data)):
        raise NonFiniteError("f(x) is not finite")
    if out.size != 1:
        raise ValueError("f must return a scalar")
    out.backward()
    analytic = xt.grad if xt.grad is not None else np.zeros_like(x)
    numeric = numeric_grad(f, x.astype(np.float64), eps)
    return max_rel_error(analytic, numeric)


def directional_grad_check(f: Callable[[Tensor], Tensor], x, directions: int = 4,
                           eps: float = 1e-5, seed: int = 0) -> float:
    """Compare tape and central-difference derivatives along random unit directions.

    Suited to composite functions with many inputs, where a per-coordinate
    sweep is too slow; finite differences again run in float64.
    """
    x = x.data if isinstance(x, Tensor) else np.asarray(x)
    xt = Tensor(x, requires_grad=True)
    out = f(xt)
    if out.size != 1:
        raise ValueError("f must return a scalar")
    out.backward()
    analytic = xt.grad if xt.grad is not None else np.zeros_like(x)
    rng = np.random.default_rng(seed)
    x64 = x.astype(np.float64)
    worst = 0.0
    for _ in range(directions):
        v = rng.normal(size=x.shape)
        v /= np.linalg.norm(v)
        fp = _scalar(f(Tensor(x64 + eps * v)))
        fm = _scalar(f(Tensor(x64 - eps * v)))
        numeric = (fp - fm) / (2 * eps)
        tape = float((analytic.astype(np.float64) * v).sum())
        worst = max(worst, max_rel_error(np.array([tape]), np.array([numeric])))
    return worst
