"""Convolution and bilinear sampling ops.

All ops accept a single map ``[C, H, W]`` or a batch ``[B, C, H, W]``; the
batched form is what the detector uses so that a target frame and its
supports go through one call.
"""

from __future__ import annotations

import numpy as np

from .core import DimensionError, Tensor, _make, as_tensor


def _batched(x: Tensor) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x.data[None], True
    if x.ndim == 4:
        return x.data, False
    raise DimensionError(f"expected [C,H,W] or [B,C,H,W], got {x.shape}")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, pad: int | None = None) -> Tensor:
    """Cross-correlation with square kernels (k in {1, 3}).

    ``pad`` defaults to ``k // 2`` (same-size output at stride 1).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    bias = None if bias is None else as_tensor(bias)
    xd, squeeze = _batched(x)
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise DimensionError(f"weight must be [C_out, C_in, k, k], got {weight.shape}")
    c_out, c_in, k, _ = weight.shape
    if k not in (1, 3):
        raise DimensionError(f"kernel size {k} not supported")
    B, C, H, W = xd.shape
    if C != c_in:
        raise DimensionError(f"input has {C} channels, weight expects {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(f"bias must be ({c_out},), got {bias.shape}")
    if pad is None:
        pad = k // 2
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    if Ho <= 0 or Wo <= 0:
        raise DimensionError("input smaller than kernel")

    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    taps = [(i, j) for i in range(k) for j in range(k)]
    cols = np.empty((B, C, k * k, Ho, Wo), dtype=np.result_type(xd, weight.data))
    for t, (i, j) in enumerate(taps):
        cols[:, :, t] = xp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride]
    cols = cols.reshape(B, C * k * k, Ho * Wo)
    wmat = weight.data.reshape(c_out, C * k * k)
    out = wmat @ cols
    if bias is not None:
        out = out + bias.data[:, None]
    out = out.reshape(B, c_out, Ho, Wo)

    def backward(g):
        g = g.reshape(B, c_out, Ho * Wo)
        gw = np.einsum("bop,bkp->ok", g, cols).reshape(weight.shape)
        gb = g.sum(axis=(0, 2)) if bias is not None else None
        gcols = (wmat.T @ g).reshape(B, C, k * k, Ho, Wo)
        gxp = np.zeros(xp.shape, dtype=gcols.dtype)
        for t, (i, j) in enumerate(taps):
            gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += gcols[:, :, t]
        gx = gxp[:, :, pad:pad + H, pad:pad + W] if pad else gxp
        if squeeze:
            gx = gx[0]
        return (np.ascontiguousarray(gx), gw, gb)

    parents = (x, weight) + ((bias,) if bias is not None else ())
    if bias is None:
        return _make(out[0] if squeeze else out, parents, lambda g: backward(g)[:2])
    return _make(out[0] if squeeze else out, parents, backward)


# ---------------------------------------------------------------------------
# bilinear sampling kernel shared by bilinear_sample and deform_conv
# ---------------------------------------------------------------------------

class BilinearSampler:
    """Vectorized zero-padded bilinear gather with its adjoint.

    ``feat`` is ``[B, C, H, W]``; ``ys`` / ``xs`` are ``[B, P]`` sample
    coordinates in grid units (row, column).  Any corner that falls off the
    grid reads as zero, so a point further than one cell outside the map
    samples exactly zero.
    """

    def __init__(self, feat: np.ndarray, ys: np.ndarray, xs: np.ndarray):
        self.shape = feat.shape
        B, C, H, W = feat.shape
        y0 = np.floor(ys)
        x0 = np.floor(xs)
        dtype = np.result_type(feat, ys, xs)
        ly = (ys - y0).astype(dtype)
        lx = (xs - x0).astype(dtype)
        y0 = y0.astype(np.int64)
        x0 = x0.astype(np.int64)
        self.ly, self.lx = ly, lx
        self.index = []  # (flat index [B,P], valid [B,P]) per corner
        for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
            yc, xc = y0 + dy, x0 + dx
            valid = (yc >= 0) & (yc < H) & (xc >= 0) & (xc < W)
            flat = np.where(valid, np.clip(yc, 0, H - 1) * W + np.clip(xc, 0, W - 1), 0)
            self.index.append((flat, valid))
        flat_feat = feat.reshape(B, C, H * W)
        bidx = np.arange(B)[:, None, None]
        cidx = np.arange(C)[None, :, None]
        # corner values [4, B, C, P], zero where off-grid
        self.corners = np.stack([
            flat_feat[bidx, cidx, flat[:, None, :]] * valid[:, None, :]
            for flat, valid in self.index
        ])

    def weights(self):
        ly, lx = self.ly, self.lx
        hy, hx = 1 - ly, 1 - lx
        return (hy * hx, hy * lx, ly * hx, ly * lx)

    def values(self) -> np.ndarray:
        """Sampled values ``[B, C, P]``."""
        w = self.weights()
        v = self.corners
        return (v[0] * w[0][:, None] + v[1] * w[1][:, None]
                + v[2] * w[2][:, None] + v[3] * w[3][:, None])

    def grad_feature(self, g: np.ndarray) -> np.ndarray:
        """Adjoint of :meth:`values` w.r.t. the feature map; ``g`` is ``[B, C, P]``."""
        B, C, H, W = self.shape
        HW = H * W
        base = (np.arange(B)[:, None, None] * C + np.arange(C)[None, :, None]) * HW
        idx, wts = [], []
        for (flat, valid), w in zip(self.index, self.weights()):
            idx.append((base + flat[:, None, :]).ravel())
            wts.append((g * (w * valid)[:, None, :]).ravel())
        out = np.bincount(np.concatenate(idx), weights=np.concatenate(wts), minlength=B * C * HW)
        return out.reshape(self.shape).astype(g.dtype)

    def grad_coords(self, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Gradients w.r.t. ``ys`` and ``xs``, each ``[B, P]``."""
        v00, v01, v10, v11 = self.corners
        ly, lx = self.ly[:, None], self.lx[:, None]
        dvdy = (v10 - v00) * (1 - lx) + (v11 - v01) * lx
        dvdx = (v01 - v00) * (1 - ly) + (v11 - v10) * ly
        return (g * dvdy).sum(axis=1), (g * dvdx).sum(axis=1)


def bilinear_sample(feature: Tensor, y, x) -> Tensor:
    """Sample ``feature [C, H, W]`` at ``(y, x)``.

    ``y`` and ``x`` are floats or same-shape tensors; the result is
    ``[C, *y.shape]``.  Differentiable w.r.t. the feature and the coordinates.
    """
    feature = as_tensor(feature)
    if feature.ndim != 3:
        raise DimensionError(f"feature must be [C,H,W], got {feature.shape}")
    y, x = as_tensor(y, feature.dtype), as_tensor(x, feature.dtype)
    if y.shape != x.shape:
        raise DimensionError(f"coordinate shapes differ: {y.shape} vs {x.shape}")
    pshape = y.shape
    C = feature.shape[0]
    sampler = BilinearSampler(feature.data[None], y.data.reshape(1, -1), x.data.reshape(1, -1))
    out = sampler.values()[0].reshape((C,) + pshape)

    def backward(g):
        g = g.reshape(1, C, -1)
        gf = sampler.grad_feature(g)[0]
        gy, gx = sampler.grad_coords(g)
        return gf, gy.reshape(pshape), gx.reshape(pshape)

    return _make(out, (feature, y, x), backward)
