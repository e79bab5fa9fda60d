"""Channel-aware temporal feature transformation.

Each channel of the aligned target feature attends over every channel of
every aggregated frame (the target itself first, then the supports): the
similarity of flattened channel maps, scaled by ``1/sqrt(H*W)`` and
softmax-normalized, weights a sum of those channel maps.
"""

from __future__ import annotations

import math
from typing import Sequence

from .tensor import DimensionError, Tensor, concat, matmul, reshape, scale, softmax, transpose


def _check_uniform(f_t: Tensor, supports: Sequence[Tensor]) -> None:
    for s in supports:
        if s.shape != f_t.shape:
            raise DimensionError(f"support shape {s.shape} differs from target {f_t.shape}")


def stack_supports(f_t: Tensor, supports: Sequence[Tensor]) -> Tensor:
    """Rows ``[target, support_1, ..., support_N]`` -> ``[(B,) M*C, H*W]``."""
    if f_t is None:
        raise ValueError("target feature is required")
    _check_uniform(f_t, supports)
    lead = f_t.shape[:-3]
    C, H, W = f_t.shape[-3:]
    frames = [f_t, *supports]
    stacked = concat(frames, axis=-3)
    return reshape(stacked, lead + (len(frames) * C, H * W))


def unstack(stacked: Tensor, channels: int, hw: tuple[int, int]) -> list[Tensor]:
    lead = stacked.shape[:-2]
    M = stacked.shape[-2] // channels
    full = reshape(stacked, lead + (M, channels) + tuple(hw))
    return [full[(Ellipsis, m, slice(None), slice(None), slice(None))] for m in range(M)]


def channel_attention(f_t: Tensor, stacked: Tensor) -> Tensor:
    """Row-stochastic ``[(B,) C, M*C]`` attention of target channels over stacked channels."""
    H, W = f_t.shape[-2:]
    q = reshape(f_t, f_t.shape[:-2] + (H * W,))
    scores = matmul(q, transpose(stacked, _swap_last(stacked.ndim)))
    return softmax(scale(scores, 1.0 / math.sqrt(H * W)), axis=-1)


def channel_aware_aggregate(f_t: Tensor, supports: Sequence[Tensor],
                            return_attention: bool = False, include_target: bool = True):
    """Aggregate the aligned target feature with aligned support features.

    ``f_t`` and each support are ``[C, H, W]`` (or batched ``[B, C, H, W]``).
    By default the target's own channels are candidates alongside the
    supports; ``include_target=False`` attends over the supports alone.
    """
    if include_target:
        stacked = stack_supports(f_t, supports)
    else:
        if not supports:
            raise ValueError("support-only aggregation needs at least one support")
        stacked = stack_supports(supports[0], supports[1:])
        _check_uniform(f_t, supports)
    attn = channel_attention(f_t, stacked)
    out = reshape(matmul(attn, stacked), f_t.shape)
    if return_attention:
        return out, attn
    return out


def attention_entries(channels: int, n_frames: int) -> int:
    """Entries of the attention map built for ``n_frames`` aggregated frames."""
    return channels * n_frames * channels


def _swap_last(ndim: int) -> tuple:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)
