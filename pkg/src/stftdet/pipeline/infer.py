"""Sequence inference with a cached static pass."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..model import LevelOutput
from ..postprocess import Detection, detections_from_fields, fuse_boxes, fuse_scores, nms
from ..simdata import SUPPORT_WINDOW, SequenceManifest
from ..targets import decode_proposals
from ..tensor import Tensor, no_grad
from .stft import ModelState, static_pass, temporal_pass

STATIC_CHUNK = 16


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def inference_supports(t: int, length: int, n: int, seed: int = 0) -> list[int]:
    """Up to ``n`` distinct frames from the ``[t-9, t+9]`` window (never ``t``).

    Falls back to the target itself for one-frame sequences.  The draw is
    seeded per target so repeated runs agree.
    """
    cand = [i for i in range(max(0, t - SUPPORT_WINDOW), min(length, t + SUPPORT_WINDOW + 1))
            if i != t]
    if not cand:
        return [t]
    if n >= len(cand):
        return cand
    rng = np.random.default_rng([seed, t])
    return sorted(int(i) for i in rng.choice(cand, size=n, replace=False))


def static_cache(state: ModelState, images: np.ndarray) -> list[list[dict]]:
    """Static outputs per frame and level as plain arrays (no graph)."""
    cache: list[list[dict]] = []
    with no_grad():
        for start in range(0, len(images), STATIC_CHUNK):
            levels = static_pass(state, Tensor(np.asarray(images[start:start + STATIC_CHUNK])))
            for b in range(levels[0].cls_feat.shape[0]):
                cache.append([{k: getattr(lv, k).data[b:b + 1] for k in
                               ("cls_feat", "reg_feat", "cls_logits", "proposals")}
                              | {"stride": lv.stride} for lv in levels])
    return cache


def _as_level(d: dict) -> LevelOutput:
    return LevelOutput(Tensor(d["cls_feat"]), Tensor(d["reg_feat"]), Tensor(d["cls_logits"]),
                       Tensor(d["proposals"]), d["stride"])


def frame_fields(state: ModelState, cache: list, t: int, supports: Sequence[int],
                 attention: list | None = None):
    """Per-level fused ``(scores [H, W], boxes [H, W, 4])`` for target ``t``.

    When ``attention`` is a list, one ``{branch: map}`` dict per level is
    appended to it.
    """
    frames = [t] if state.temporal is None else [t, *supports]
    with no_grad():
        preds = temporal_pass(state, [[_as_level(d) for d in cache[i]] for i in frames])
    scores, boxes = [], []
    for p in preds:
        if attention is not None:
            attention.append({k: v[0] for k, v in p.attention.items()})
        static = _sigmoid(p.static_logits.data[0, 0].astype(np.float64))
        sboxes = decode_proposals(p.proposals.data[0].astype(np.float64), p.stride)
        if p.offset_logits is None:
            scores.append(static)
            boxes.append(sboxes)
        else:
            offset = _sigmoid(p.offset_logits.data[0, 0].astype(np.float64))
            scores.append(fuse_scores(static, offset))
            boxes.append(fuse_boxes(sboxes, p.deltas.data[0].transpose(1, 2, 0).astype(np.float64)))
    return scores, boxes


def infer(state: ModelState, seq: SequenceManifest, n_infer: int = 10, seed: int = 0,
          cache: list | None = None,
          on_attention: Callable[[int, list], None] | None = None) -> list[list[Detection]]:
    """Detections for every frame of ``seq`` (each frame in turn is the target).

    ``on_attention(t, maps)`` receives the per-level attention maps of each
    target frame when given.
    """
    cache = cache if cache is not None else static_cache(state, seq.images())
    out = []
    for t in range(len(seq)):
        sup = inference_supports(t, len(seq), n_infer, seed)
        maps = [] if on_attention else None
        scores, boxes = frame_fields(state, cache, t, sup, maps)
        if on_attention:
            on_attention(t, maps)
        out.append(nms(detections_from_fields(scores, boxes, t)))
    return out
