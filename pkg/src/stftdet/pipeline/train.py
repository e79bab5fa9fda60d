"""Training loop: clip sampling, target assignment, loss and SGD."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..losses import LossReport, total_loss
from ..simdata import SequenceManifest, apply_annotation_ratio, sample_support_indices
from ..targets import assign_frame
from ..tensor import NonFiniteError, Tensor, concat, reshape, sigmoid, transpose
from .stft import VARIANTS, LevelPrediction, ModelState, forward_stft


@dataclass
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    warmup: int = 50
    decay_at: tuple = (0.7, 0.9)      # fractions of ``steps`` where lr drops
    decay_factor: float = 0.1
    steps: int = 1500
    batch: int = 2
    n_train: int = 2
    n_infer: int = 10
    seed: int = 7
    variant: str = "e"
    annotation_ratio: float = 1.0
    grad_clip: float = 5.0
    augment: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.n_train < 1 or self.n_infer < 1:
            raise ValueError("support counts must be at least 1")
        if self.batch < 1 or self.steps < 0:
            raise ValueError("batch must be positive and steps non-negative")
        if not 0 < self.annotation_ratio <= 1:
            raise ValueError("annotation ratio must lie in (0, 1]")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        d = dict(d)
        if "decay_at" in d:
            d["decay_at"] = tuple(d["decay_at"])
        return cls(**d)


class SGD:
    """Momentum SGD with L2 weight decay folded into the gradient."""

    def __init__(self, params: Sequence[Tensor], momentum: float, weight_decay: float):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float((p.grad ** 2).sum()) for p in self.params
                                 if p.grad is not None)))

    def step(self, lr: float, clip: float | None = None) -> None:
        factor = 1.0
        if clip:
            norm = self.grad_norm()
            if norm > clip:
                factor = clip / norm
        for p, v in zip(self.params, self.velocity):
            g = np.zeros_like(p.data) if p.grad is None else p.grad * factor
            g = g + self.weight_decay * p.data
            v *= self.momentum
            v += g
            p.data -= (lr * v).astype(p.data.dtype)


def lr_at(step: int, cfg: TrainConfig) -> float:
    if cfg.warmup and step < cfg.warmup:
        return cfg.lr * (step + 1) / cfg.warmup
    drops = sum(step >= int(f * cfg.steps) for f in cfg.decay_at)
    return cfg.lr * cfg.decay_factor ** drops


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

def annotated_view(seqs: Sequence[SequenceManifest], ratio: float) -> list[SequenceManifest]:
    """Copies of ``seqs`` whose annotation flags follow ``ratio`` (images shared)."""
    out = []
    for s in seqs:
        frames = [dataclasses.replace(f) for f in s.frames]
        out.append(apply_annotation_ratio(dataclasses.replace(s, frames=frames), ratio))
    return out


def annotated_pool(seqs: Sequence[SequenceManifest]) -> list[tuple[int, int]]:
    pool = [(si, f.frame_index) for si, s in enumerate(seqs) for f in s.frames if f.annotated]
    if not pool:
        raise ValueError("no annotated frames to train on")
    return pool


def _flip_boxes(boxes: np.ndarray, size: int, axis: str) -> np.ndarray:
    b = boxes.copy()
    if axis == "x":
        b[:, [0, 2]] = size - boxes[:, [2, 0]]
    else:
        b[:, [1, 3]] = size - boxes[:, [3, 1]]
    return b


def sample_clips(seqs: Sequence[SequenceManifest], pool: list, cfg: TrainConfig,
                 rng: np.random.Generator, n_support: int):
    """Draw ``cfg.batch`` target frames plus supports.

    Returns ``(images [B, 1+n, 3, H, W], gts list of [K, 4], picks)``.
    """
    clips, gts, picks = [], [], []
    for _ in range(cfg.batch):
        si, t = pool[int(rng.integers(len(pool)))]
        seq = seqs[si]
        idx = [t] + (sample_support_indices(t, len(seq), n_support, rng) if n_support else [])
        clip = np.stack([seq.frames[i].image for i in idx])
        boxes = np.asarray(seq.frames[t].visible_boxes(), dtype=np.float64).reshape(-1, 4)
        if cfg.augment:
            size = clip.shape[-1]
            if rng.random() < 0.5:
                clip = clip[..., ::-1]
                boxes = _flip_boxes(boxes, size, "x")
            if rng.random() < 0.5:
                clip = clip[..., ::-1, :]
                boxes = _flip_boxes(boxes, clip.shape[-2], "y")
        clips.append(np.ascontiguousarray(clip))
        gts.append(boxes)
        picks.append((seq.name, t, idx[1:]))
    return np.stack(clips).astype(np.float32), gts, picks


# ---------------------------------------------------------------------------
# loss assembly
# ---------------------------------------------------------------------------

def _flat_field(t: Tensor) -> Tensor:
    """``[B, K, H, W]`` -> ``[B, H*W, K]``."""
    B, K, H, W = t.shape
    return transpose(reshape(t, (B, K, H * W)), (0, 2, 1))


def _gather(preds: list[LevelPrediction], attr: str, prob: bool) -> Tensor:
    parts = []
    for p in preds:
        t = getattr(p, attr)
        parts.append(_flat_field(sigmoid(t) if prob else t))
    out = concat(parts, axis=1)
    B, P, K = out.shape
    return reshape(out, (B * P,) if K == 1 else (B * P, K))


def build_targets(preds: list[LevelPrediction], gts: Sequence[np.ndarray]) -> dict:
    strides = [p.stride for p in preds]
    cols = {"static_label": [], "static_target": [], "temporal_label": [], "temporal_target": []}
    for b, boxes in enumerate(gts):
        res = assign_frame(boxes, [p.proposals.data[b] for p in preds], strides)
        for key in cols:
            for lv in res.levels:
                v = getattr(lv, key)
                cols[key].append(v.reshape(-1) if v.ndim == 2 else v.reshape(4, -1).T)
    return {k: np.concatenate(v) for k, v in cols.items()}


def compute_loss(state: ModelState, images: np.ndarray, gts: Sequence[np.ndarray]) -> LossReport:
    target = Tensor(images[:, 0])
    supports = Tensor(images[:, 1:]) if images.shape[1] > 1 else None
    preds = forward_stft(state, target, supports)
    targets = build_targets(preds, gts)
    static_probs = _gather(preds, "static_logits", prob=True)
    static_ltrb = _gather(preds, "proposals", prob=False)
    if state.temporal is None:
        return total_loss(static_probs, static_ltrb, None, None, targets)
    return total_loss(static_probs, static_ltrb, _gather(preds, "offset_logits", prob=True),
                      _gather(preds, "deltas", prob=False), targets)


# ---------------------------------------------------------------------------
# loop
# ---------------------------------------------------------------------------

def train(cfg: TrainConfig, seqs: Sequence[SequenceManifest], log_path=None,
          state: ModelState | None = None,
          callback: Callable[[int, LossReport], None] | None = None):
    """Train one variant; returns ``(state, log)`` where ``log`` is a list of dicts."""
    train_seqs = annotated_view(seqs, cfg.annotation_ratio)
    pool = annotated_pool(train_seqs)
    state = state or ModelState.create(cfg.variant, cfg.seed)
    state.meta.update({"variant": cfg.variant, "config": cfg.to_dict()})
    rng = np.random.default_rng([cfg.seed, 1])
    opt = SGD(state.parameters(), cfg.momentum, cfg.weight_decay)
    n_support = cfg.n_train if state.temporal is not None else 0
    log = []
    fh = open(log_path, "w") if log_path else None
    try:
        for step in range(cfg.steps):
            images, gts, _ = sample_clips(train_seqs, pool, cfg, rng, n_support)
            opt.zero_grad()
            report = compute_loss(state, images, gts)
            report.tensor.backward()
            if not np.isfinite(opt.grad_norm()):
                raise NonFiniteError(f"non-finite gradient at step {step}: {report.as_dict()}")
            opt.step(lr_at(step, cfg), cfg.grad_clip)
            row = {"step": step, "L_cls": report.L_cls, "L_reg": report.L_reg,
                   "L_cls_st": report.L_cls_st, "L_reg_st": report.L_reg_st,
                   "total": report.total}
            log.append(row)
            if fh:
                fh.write(json.dumps(row) + "\n")
            if callback:
                callback(step, report)
    finally:
        if fh:
            fh.close()
    return state, log


def annotated_frames(seqs: Sequence[SequenceManifest], ratio: float) -> list[tuple[str, int]]:
    """``(sequence name, frame index)`` of every frame whose labels enter the loss."""
    return [(s.name, f.frame_index) for s in annotated_view(seqs, ratio)
            for f in s.frames if f.annotated]
