"""Proposal-guided spatial feature transformation.

Static proposals are normalized by the level stride, mapped to sampling
offsets by a 1x1 conv and consumed by a 3x3 deformable conv.  Support
frames are guided by the target proposals together with their difference
from the support's own proposals.
"""

from __future__ import annotations

import numpy as np

from .model import Conv, Module
from .tensor import (
    BilinearSampler,
    DimensionError,
    Tensor,
    make_op,
    as_tensor,
    concat,
    conv2d,
    mul,
    sub,
)

KERNEL = 3
OFFSET_CHANNELS = 2 * KERNEL * KERNEL
DCN_GAIN = 1.0
_SIGNS = np.array([-1.0, -1.0, 1.0, 1.0])


def normalize_proposals(p: Tensor, stride: int) -> Tensor:
    """``(l, t, r, b) -> (-l, -t, r, b) / stride`` per location.

    ``p`` is ``[4, H, W]`` or ``[B, 4, H, W]``.
    """
    if stride <= 0:
        raise ValueError(f"stride must be positive, got {stride}")
    p = as_tensor(p)
    if p.shape[-3] != 4:
        raise DimensionError(f"proposal field needs 4 channels, got {p.shape}")
    factor = (_SIGNS / stride).astype(p.dtype).reshape(4, 1, 1)
    return mul(p, Tensor(factor))


def offsets_from_guidance(guidance: Tensor, conv: Conv) -> Tensor:
    """Per-location linear map from guidance channels to 18 offset channels."""
    g = guidance.shape[-3]
    if g not in (4, 8) or g != conv.weight.shape[1]:
        raise DimensionError(f"guidance has {g} channels, offset conv expects {conv.weight.shape[1]}")
    if conv.weight.shape[2] != 1:
        raise DimensionError("offset conv must be 1x1")
    return conv(guidance)


def deform_conv(feature: Tensor, offsets: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """3x3 deformable convolution, stride 1, padding 1.

    ``offsets`` channel ``2k`` / ``2k+1`` holds ``(dy, dx)`` for tap
    ``k = 3 * i + j``; tap ``k`` at output ``(h, w)`` samples the feature at
    ``(h + i - 1 + dy, w + j - 1 + dx)`` with zero-padded bilinear
    interpolation.
    """
    feature, offsets, weight = as_tensor(feature), as_tensor(offsets), as_tensor(weight)
    bias = None if bias is None else as_tensor(bias)
    squeeze = feature.ndim == 3
    f = feature.data[None] if squeeze else feature.data
    o = offsets.data[None] if squeeze else offsets.data
    B, C, H, W = f.shape
    c_out = weight.shape[0]
    if weight.shape != (c_out, C, KERNEL, KERNEL):
        raise DimensionError(f"weight {weight.shape} incompatible with {C} input channels")
    if o.shape != (B, OFFSET_CHANNELS, H, W):
        raise DimensionError(f"offsets must be {(B, OFFSET_CHANNELS, H, W)}, got {o.shape}")

    ti, tj = np.divmod(np.arange(KERNEL * KERNEL), KERNEL)
    base_y = np.arange(H)[None, :, None] + (ti - 1)[:, None, None]   # [9, H, 1]
    base_x = np.arange(W)[None, None, :] + (tj - 1)[:, None, None]   # [9, 1, W]
    dtype = np.result_type(f.dtype, o.dtype)
    o = o.reshape(B, KERNEL * KERNEL, 2, H, W)
    ys = (base_y[None].astype(dtype) + o[:, :, 0]).reshape(B, -1)
    xs = (base_x[None].astype(dtype) + o[:, :, 1]).reshape(B, -1)

    sampler = BilinearSampler(f, ys, xs)
    cols = sampler.values().reshape(B, C * KERNEL * KERNEL, H * W)
    wmat = weight.data.reshape(c_out, -1)
    out = wmat @ cols
    if bias is not None:
        out = out + bias.data[:, None]
    out = out.reshape(B, c_out, H, W)

    def backward(g):
        g = g.reshape(B, c_out, H * W)
        gw = np.einsum("bop,bkp->ok", g, cols).reshape(weight.shape)
        gcols = (wmat.T @ g).reshape(B, C, -1)
        gf = sampler.grad_feature(gcols)
        gy, gx = sampler.grad_coords(gcols)
        go = np.stack([gy.reshape(B, -1, H, W), gx.reshape(B, -1, H, W)], axis=2)
        go = go.reshape(B, OFFSET_CHANNELS, H, W)
        if squeeze:
            gf, go = gf[0], go[0]
        grads = [gf, go, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    parents = (feature, offsets, weight) + ((bias,) if bias is not None else ())
    return make_op(out[0] if squeeze else out, parents, backward)


class DeformLayer(Module):
    """3x3 deformable conv weights, initialized near a scaled identity map."""

    def __init__(self, rng: np.random.Generator, width: int, noise: float = 0.01,
                 gain: float | None = None):
        gain = DCN_GAIN if gain is None else gain
        w = rng.normal(0.0, noise, size=(width, width, KERNEL, KERNEL))
        w[np.arange(width), np.arange(width), 1, 1] += gain
        self.weight = Tensor(w.astype(np.float32), requires_grad=True)

    def __call__(self, feature: Tensor, offsets: Tensor) -> Tensor:
        return deform_conv(feature, offsets, self.weight)


class ProposalGuidedTransform(Module):
    """Offset conv (zero-initialized) plus deformable conv for one guidance arity."""

    def __init__(self, rng: np.random.Generator, width: int, guidance_channels: int):
        self.offset_conv = Conv(rng, guidance_channels, OFFSET_CHANNELS, k=1, zero=True)
        self.dcn = DeformLayer(rng, width)

    def __call__(self, feature: Tensor, guidance: Tensor) -> Tensor:
        return self.dcn(feature, offsets_from_guidance(guidance, self.offset_conv))


def transform_target(xform: ProposalGuidedTransform, f_t: Tensor, p_t: Tensor, stride: int) -> Tensor:
    return xform(f_t, normalize_proposals(p_t, stride))


def support_guidance(p_t: Tensor, p_s: Tensor, stride: int) -> Tensor:
    """``[p_t*, p_t* - p_s*]`` stacked on the channel axis."""
    if p_t.shape != p_s.shape:
        raise DimensionError(f"proposal grids differ: {p_t.shape} vs {p_s.shape}")
    nt = normalize_proposals(p_t, stride)
    ns = normalize_proposals(p_s, stride)
    return concat([nt, sub(nt, ns)], axis=-3)


def transform_support(xform: ProposalGuidedTransform, f_s: Tensor, p_t: Tensor, p_s: Tensor,
                      stride: int) -> Tensor:
    return xform(f_s, support_guidance(p_t, p_s, stride))


class FeatureGuidedTransform(Module):
    """Plain deformable conv: offsets from a 3x3 conv over the feature itself."""

    def __init__(self, rng: np.random.Generator, width: int):
        self.offset_conv = Conv(rng, width, OFFSET_CHANNELS, k=3, zero=True)
        self.dcn = DeformLayer(rng, width)

    def __call__(self, feature: Tensor) -> Tensor:
        return self.dcn(feature, self.offset_conv(feature))


def plain_conv(feature: Tensor, weight: Tensor) -> Tensor:
    return conv2d(feature, weight, None, stride=1, pad=1)
