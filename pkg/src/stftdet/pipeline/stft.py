"""Model state and the multi-frame forward pass for every ablation variant.

Variants::

    a             static image detector only
    b             supports added to the target feature, no alignment
    c             channel-aware aggregation of unaligned features
    d             channel-aware aggregation after plain deformable alignment
    e             full model: proposal-guided alignment + channel-aware aggregation
    cosine        proposal-guided alignment + per-location cosine weighting
    point_wise    proposal-guided alignment + position attention (scale alpha)
    channel_wise  proposal-guided alignment + channel attention (scale beta)
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from ..model import WIDTH, Backbone, Conv, GroupNorm, LevelOutput, Module, PyramidFeatures, StaticHeads
from ..spatial import FeatureGuidedTransform, ProposalGuidedTransform, support_guidance, normalize_proposals
from ..temporal import channel_aware_aggregate
from ..tensor import (
    Tensor,
    add,
    concat,
    matmul,
    mul,
    relu,
    reshape,
    scale,
    softmax,
    sum_,
    transpose,
)

VARIANTS = ("a", "b", "c", "d", "e", "cosine", "point_wise", "channel_wise")
PROPOSAL_GUIDED = ("e", "cosine", "point_wise", "channel_wise")
BRANCHES = ("cls", "reg")
PRIOR_PROB = 0.01


class OffsetHeads(Module):
    """Per branch: 3x3 conv + GroupNorm + ReLU, then a 3x3 output conv."""

    def __init__(self, rng: np.random.Generator, width: int = WIDTH):
        prior = -math.log((1 - PRIOR_PROB) / PRIOR_PROB)
        self.cls_hidden = Conv(rng, width, width)
        self.cls_norm = GroupNorm(width)
        self.cls_out = Conv(rng, width, 1, std=0.01, bias=prior)
        self.reg_hidden = Conv(rng, width, width)
        self.reg_norm = GroupNorm(width)
        self.reg_out = Conv(rng, width, 4, std=0.01)

    def score_logits(self, agg: Tensor) -> Tensor:
        return self.cls_out(relu(self.cls_norm(self.cls_hidden(agg))))

    def deltas(self, agg: Tensor) -> Tensor:
        return self.reg_out(relu(self.reg_norm(self.reg_hidden(agg))))


class TemporalHead(Module):
    """Everything the multi-frame variants add on top of the static detector."""

    def __init__(self, rng: np.random.Generator, variant: str, width: int = WIDTH):
        self.variant = variant
        if variant in PROPOSAL_GUIDED:
            self.target_xform = [ProposalGuidedTransform(rng, width, 4) for _ in BRANCHES]
            self.support_xform = [ProposalGuidedTransform(rng, width, 8) for _ in BRANCHES]
        elif variant == "d":
            self.feature_xform = [FeatureGuidedTransform(rng, width) for _ in BRANCHES]
        if variant == "point_wise":
            self.alpha = Tensor(np.zeros(1, dtype=np.float32), requires_grad=True)
        if variant == "channel_wise":
            self.beta = Tensor(np.zeros(1, dtype=np.float32), requires_grad=True)
        self.heads = OffsetHeads(rng, width)


@dataclass
class ModelState:
    variant: str
    backbone: Backbone
    static: StaticHeads
    temporal: TemporalHead | None
    meta: dict = field(default_factory=dict)

    @classmethod
    def create(cls, variant: str = "e", seed: int = 0, width: int = WIDTH) -> "ModelState":
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        rng = np.random.default_rng(seed)
        backbone = Backbone(rng, width)
        static = StaticHeads(rng, width)
        temporal = TemporalHead(rng, variant, width) if variant != "a" else None
        return cls(variant, backbone, static, temporal)

    def named_parameters(self) -> "OrderedDict[str, Tensor]":
        out = OrderedDict()
        for prefix, mod in (("backbone", self.backbone), ("static", self.static),
                            ("temporal", self.temporal)):
            if mod is None:
                continue
            for name, p in mod.named_parameters(prefix + "."):
                out[name] = p
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def load_arrays(self, arrays: dict) -> None:
        params = self.named_parameters()
        missing = set(params) - set(arrays)
        if missing:
            raise KeyError(f"checkpoint lacks {sorted(missing)}")
        for name, p in params.items():
            if arrays[name].shape != p.shape:
                raise ValueError(f"{name}: shape {arrays[name].shape} != {p.shape}")
            p.data = np.array(arrays[name], dtype=np.float32)


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def static_pass(state: ModelState, images: Tensor) -> list[LevelOutput]:
    feats: PyramidFeatures = state.backbone(images)
    return state.static(feats)


@dataclass
class LevelPrediction:
    stride: int
    static_logits: Tensor          # [B, 1, H, W]
    proposals: Tensor              # [B, 4, H, W]
    offset_logits: Tensor | None   # [B, 1, H, W]
    deltas: Tensor | None          # [B, 4, H, W]
    attention_entries: int = 0
    attention: dict = field(default_factory=dict)   # branch -> attention map (no graph)


def _split_frames(t: Tensor, n_frames: int) -> list[Tensor]:
    """``[B*M, ...]`` laid out frame-major per clip -> list of M tensors ``[B, ...]``."""
    B = t.shape[0] // n_frames
    full = reshape(t, (B, n_frames) + t.shape[1:])
    return [full[:, m] for m in range(n_frames)]


def _spatial(state: ModelState, branch: int, feats: list[Tensor], props: list[Tensor],
             stride: int) -> list[Tensor]:
    """Align target (index 0) and supports; returns per-frame aligned features."""
    head = state.temporal
    variant = state.variant
    if variant in ("b", "c"):
        return feats
    if variant == "d":
        B = feats[0].shape[0]
        aligned = head.feature_xform[branch](concat(feats, axis=0))
        return _split_frames_batch(aligned, len(feats), B)
    f_t, p_t = feats[0], props[0]
    out = [head.target_xform[branch](f_t, normalize_proposals(p_t, stride))]
    if len(feats) > 1:
        n = len(feats) - 1
        B = f_t.shape[0]
        f_s = concat(feats[1:], axis=0)
        p_rep = concat([p_t] * n, axis=0)
        guide = support_guidance(p_rep, concat(props[1:], axis=0), stride)
        aligned = head.support_xform[branch](f_s, guide)
        out += _split_frames_batch(aligned, n, B)
    return out


def _split_frames_batch(t: Tensor, n: int, B: int) -> list[Tensor]:
    """``[n*B, ...]`` stacked support-major -> list of n tensors ``[B, ...]``."""
    return [t[m * B:(m + 1) * B] for m in range(n)]


def _aggregate(state: ModelState, aligned: list[Tensor]) -> tuple[Tensor, int, Tensor | None]:
    variant = state.variant
    f_t, supports = aligned[0], aligned[1:]
    B, C, H, W = f_t.shape
    M = len(aligned)
    if variant == "b":
        out = f_t
        for s in supports:
            out = add(out, s)
        return out, 0, None
    if variant in ("c", "d", "e"):
        out, attn = channel_aware_aggregate(f_t, supports, return_attention=True)
        return out, C * M * C, attn
    if variant == "channel_wise":
        stacked = reshape(concat(aligned, axis=1), (B, M * C, H * W))
        q = reshape(f_t, (B, C, H * W))
        energy = matmul(q, transpose(stacked, (0, 2, 1)))
        # max(energy) - energy inside the softmax: the row max cancels
        attn = softmax(scale(energy, -1.0), axis=-1)
        out = reshape(matmul(attn, stacked), f_t.shape)
        return add(mul(out, state.temporal.beta), f_t), M * C * C, attn
    if variant == "point_wise":
        q = transpose(reshape(f_t, (B, C, H * W)), (0, 2, 1))                       # [B, HW, C]
        keys = reshape(transpose(concat([reshape(a, (B, 1, C, H * W)) for a in aligned], axis=1),
                                 (0, 2, 1, 3)), (B, C, M * H * W))                   # [B, C, M*HW]
        attn = softmax(matmul(q, keys), axis=-1)                                     # [B, HW, M*HW]
        out = matmul(keys, transpose(attn, (0, 2, 1)))                               # [B, C, HW]
        return add(mul(reshape(out, f_t.shape), state.temporal.alpha), f_t), M * (H * W) ** 2, attn
    if variant == "cosine":
        eps = 1e-6
        norm_t = _l2_normalize(f_t, eps)
        sims = [sum_(mul(norm_t, _l2_normalize(a, eps)), axis=1, keepdims=True) for a in aligned]
        weights = softmax(concat(sims, axis=1), axis=1)                              # [B, M, H, W]
        out = None
        for m, a in enumerate(aligned):
            term = mul(a, weights[:, m:m + 1])
            out = term if out is None else add(out, term)
        return out, M * H * W, weights
    raise ValueError(f"variant {variant!r} has no aggregation")


def _l2_normalize(x: Tensor, eps: float) -> Tensor:
    from ..tensor import div, exp, log
    sq = add(sum_(mul(x, x), axis=1, keepdims=True), eps)
    return div(x, exp(scale(log(sq), 0.5)))


def temporal_pass(state: ModelState, levels_by_frame: list[list[LevelOutput]],
                  detach_guidance: bool = True) -> list[LevelPrediction]:
    """Run alignment, aggregation and offset heads.

    ``levels_by_frame[m][l]`` is the static output of frame ``m`` (0 = target)
    at level ``l``; every entry is batched over the same ``B`` clips.
    """
    preds = []
    target_levels = levels_by_frame[0]
    for li, tgt in enumerate(target_levels):
        stride = tgt.stride
        frames = [lv[li] for lv in levels_by_frame]
        if state.variant == "a":
            preds.append(LevelPrediction(stride, tgt.cls_logits, tgt.proposals, None, None))
            continue
        props = [Tensor(f.proposals.data) if detach_guidance else f.proposals for f in frames]
        entries = 0
        aggregated, maps = [], {}
        for bi, name in enumerate(BRANCHES):
            feats = [f.cls_feat if name == "cls" else f.reg_feat for f in frames]
            aligned = _spatial(state, bi, feats, props, stride)
            agg, n, attn = _aggregate(state, aligned)
            aggregated.append(agg)
            entries += n
            if attn is not None:
                maps[name] = attn.data
        heads = state.temporal.heads
        preds.append(LevelPrediction(stride, tgt.cls_logits, tgt.proposals,
                                     heads.score_logits(aggregated[0]),
                                     heads.deltas(aggregated[1]), entries, maps))
    return preds


def forward_stft(state: ModelState, target: Tensor, supports: Tensor | None = None,
                 detach_guidance: bool = True):
    """Full forward for a batch of clips.

    ``target`` is ``[B, 3, H, W]``; ``supports`` is ``[B, N, 3, H, W]`` (or
    ``None`` / ``N = 0``).  Frames share all weights, so they go through the
    static detector as one batch.  Proposals steer the deformable sampling
    as constants unless ``detach_guidance`` is false.
    """
    if target.ndim == 3:
        target = reshape(target, (1,) + target.shape)
        if supports is not None:
            supports = reshape(supports, (1,) + supports.shape)
    B = target.shape[0]
    n = 0 if supports is None or state.variant == "a" else supports.shape[1]
    if n:
        clip = concat([reshape(target, (B, 1) + target.shape[1:]), supports], axis=1)
        images = reshape(clip, (B * (n + 1),) + target.shape[1:])
    else:
        images = target
    levels = static_pass(state, images)
    if n:
        per_frame = [[None] * len(levels) for _ in range(n + 1)]
        for li, lv in enumerate(levels):
            parts = [_split_frames(getattr(lv, k), n + 1)
                     for k in ("cls_feat", "reg_feat", "cls_logits", "proposals")]
            for m in range(n + 1):
                per_frame[m][li] = LevelOutput(parts[0][m], parts[1][m], parts[2][m], parts[3][m],
                                               lv.stride)
    else:
        per_frame = [levels]
    return temporal_pass(state, per_frame, detach_guidance)
