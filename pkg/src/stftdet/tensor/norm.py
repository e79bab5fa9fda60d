"""Group normalization."""

from __future__ import annotations

import numpy as np

from .core import DimensionError, Tensor, _make, as_tensor


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize ``[B, C, H, W]`` (or ``[C, H, W]``) over channel groups, then scale and shift.

    ``gamma`` and ``beta`` are per-channel ``[C]``.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4:
        raise DimensionError(f"expected [C,H,W] or [B,C,H,W], got {x.shape}")
    B, C, H, W = xd.shape
    if C % groups:
        raise DimensionError(f"{C} channels do not split into {groups} groups")
    if gamma.shape != (C,) or beta.shape != (C,):
        raise DimensionError(f"affine parameters must be ({C},)")
    xg = xd.reshape(B, groups, -1)
    mu = xg.mean(axis=-1, keepdims=True)
    xc = xg - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = (xc * inv).reshape(B, C, H, W)
    out = xhat * gamma.data[:, None, None] + beta.data[:, None, None]

    def backward(g):
        g = g[None] if squeeze else g
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        gh = (g * gamma.data[:, None, None]).reshape(B, groups, -1)
        xh = xhat.reshape(B, groups, -1)
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xh * (gh * xh).mean(axis=-1, keepdims=True))
        gx = gx.reshape(B, C, H, W)
        return (gx[0] if squeeze else gx), ggamma, gbeta

    return _make(out[0] if squeeze else out, (x, gamma, beta), backward)
