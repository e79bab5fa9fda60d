"""Train-evaluate harness shared by the CLI, the demos and the acceptance tests."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..model import STRIDES, WIDTH
from ..metrics import EvalReport, evaluate_detection, evaluate_localization
from ..simdata import Dataset, SequenceManifest
from ..temporal import attention_entries
from .infer import infer, static_cache
from .stft import ModelState
from .train import TrainConfig, train

THRESHOLD_GRID = tuple(np.round(np.arange(0.05, 0.951, 0.01), 2))


@dataclass
class AblationResult:
    variant: str
    detection: EvalReport
    localization: EvalReport
    threshold: float
    attention_entries: int
    log: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"variant": self.variant, "threshold": self.threshold,
                "attention_entries": self.attention_entries,
                "detection": self.detection.as_dict(),
                "localization": self.localization.as_dict()}


def predict_sequences(state: ModelState, seqs: Sequence[SequenceManifest], n_infer: int,
                      seed: int = 0, caches: dict | None = None):
    """Per-frame detections and ground truths concatenated over ``seqs``."""
    preds, gts = [], []
    for s in seqs:
        cache = caches.get(s.name) if caches is not None else None
        if cache is None:
            cache = static_cache(state, s.images())
            if caches is not None:
                caches[s.name] = cache
        preds += infer(state, s, n_infer, seed, cache=cache)
        gts += [[tuple(b) for b in f.gt_boxes] for f in s.frames]
    return preds, gts


def calibrate_threshold(preds, gts, grid: Sequence[float] = THRESHOLD_GRID) -> float:
    """Score threshold maximizing localization F1 (lowest threshold wins ties)."""
    best, best_f1 = float(grid[0]), -1.0
    for th in grid:
        f1 = evaluate_localization(preds, gts, float(th)).f1
        if f1 > best_f1 + 1e-9:
            best, best_f1 = float(th), f1
    return best


def entries_per_level(state: ModelState, n_frames: int, feature_hw: Sequence[tuple[int, int]],
                      channels: int) -> int:
    """Attention-map entries built for one target across levels and branches."""
    v = state.variant
    total = 0
    for h, w in feature_hw:
        if v in ("c", "d", "e"):
            n = attention_entries(channels, n_frames)
        elif v == "channel_wise":
            n = n_frames * channels * channels
        elif v == "point_wise":
            n = n_frames * (h * w) ** 2
        elif v == "cosine":
            n = n_frames * h * w
        else:
            n = 0
        total += 2 * n
    return total


def evaluate_state(state: ModelState, dataset: Dataset, cfg: TrainConfig,
                   threshold: float | None = None, n_infer: int | None = None):
    """Calibrate on the training split (unless given) and score the test split."""
    n_infer = cfg.n_infer if n_infer is None else n_infer
    if threshold is None:
        tp, tg = predict_sequences(state, dataset.split("train"), n_infer, cfg.seed)
        threshold = calibrate_threshold(tp, tg)
    preds, gts = predict_sequences(state, dataset.split("test"), n_infer, cfg.seed)
    return (evaluate_detection(preds, gts, threshold),
            evaluate_localization(preds, gts, threshold), threshold)


def run_ablation(variant: str, cfg: TrainConfig, dataset: Dataset,
                 state: ModelState | None = None) -> AblationResult:
    """Train ``variant`` on the training split and report test-split scores."""
    cfg = TrainConfig.from_dict({**cfg.to_dict(), "variant": variant})
    log: list = []
    if state is None:
        state, log = train(cfg, dataset.split("train"))
    det, loc, th = evaluate_state(state, dataset, cfg)
    size = dataset.split("test")[0].frames[0].image.shape[-1]
    hw = [(size // s, size // s) for s in STRIDES]
    entries = entries_per_level(state, cfg.n_infer + 1, hw, WIDTH)
    return AblationResult(variant, det, loc, th, entries, log)
