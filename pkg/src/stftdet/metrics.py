"""Frame-level detection and box-level localization scores."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .targets import iou_matrix

CRITERIA = ("centroid", "iou")
TASKS = ("detection", "localization")


@dataclass(frozen=True)
class EvalReport:
    task: str
    TP: int
    FP: int
    FN: int
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, task: str, tp: int, fp: int, fn: int) -> "EvalReport":
        p = 100.0 * tp / (tp + fp) if tp + fp else 0.0
        r = 100.0 * tp / (tp + fn) if tp + fn else 0.0
        return cls(task, int(tp), int(fp), int(fn), p, r, f1_score(p, r))

    def as_dict(self) -> dict:
        return asdict(self)


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean of two percentages (0 when both are 0)."""
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _frame_scores(preds) -> list[np.ndarray]:
    out = []
    for frame in preds:
        out.append(np.array([_score(d) for d in frame], dtype=np.float64))
    return out


def _score(d) -> float:
    return float(d["score"]) if isinstance(d, dict) else float(d.score)


def _box(d) -> np.ndarray:
    if isinstance(d, dict):
        return np.array([d["x0"], d["y0"], d["x1"], d["y1"]], dtype=np.float64)
    return np.asarray(d.box, dtype=np.float64)


def _check_aligned(preds: Sequence, gts: Sequence) -> None:
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} prediction frames but {len(gts)} ground-truth frames")


def evaluate_detection(preds: Sequence, gts: Sequence, score_thresh: float = 0.5) -> EvalReport:
    """Frame-level presence scoring.

    ``preds[i]`` lists the detections of frame ``i`` (``Detection`` objects or
    JSON dicts) and ``gts[i]`` its ground-truth boxes.
    """
    _check_aligned(preds, gts)
    tp = fp = fn = 0
    for scores, boxes in zip(_frame_scores(preds), gts):
        fired = bool((scores >= score_thresh).any())
        if len(boxes):
            tp += fired
            fn += not fired
        else:
            fp += fired
    return EvalReport.from_counts("detection", tp, fp, fn)


def _hit_matrix(pred_boxes: np.ndarray, gt_boxes: np.ndarray, criterion: str) -> np.ndarray:
    if criterion == "centroid":
        cx = 0.5 * (pred_boxes[:, 0] + pred_boxes[:, 2])[:, None]
        cy = 0.5 * (pred_boxes[:, 1] + pred_boxes[:, 3])[:, None]
        g = gt_boxes[None]
        return (cx >= g[..., 0]) & (cx <= g[..., 2]) & (cy >= g[..., 1]) & (cy <= g[..., 3])
    return iou_matrix(pred_boxes, gt_boxes) >= 0.5


def match_frame(pred_boxes: np.ndarray, scores: np.ndarray, gt_boxes: np.ndarray,
                criterion: str = "centroid") -> tuple[int, int, int]:
    """Greedy one-to-one matching in descending score order -> ``(TP, FP, FN)``."""
    if criterion not in CRITERIA:
        raise ValueError(f"unknown criterion {criterion!r}; expected one of {CRITERIA}")
    n_gt = len(gt_boxes)
    if len(pred_boxes) == 0:
        return 0, 0, n_gt
    if n_gt == 0:
        return 0, len(pred_boxes), 0
    order = np.argsort(-scores, kind="stable")
    hits = _hit_matrix(pred_boxes[order], np.asarray(gt_boxes, dtype=np.float64), criterion)
    free = np.ones(n_gt, dtype=bool)
    tp = 0
    for row in hits:
        cand = np.nonzero(row & free)[0]
        if len(cand):
            free[cand[0]] = False
            tp += 1
    return tp, len(pred_boxes) - tp, n_gt - tp


def evaluate_localization(preds: Sequence, gts: Sequence, score_thresh: float = 0.5,
                          criterion: str = "centroid") -> EvalReport:
    """Box-level scoring; ``criterion`` is ``"centroid"`` (default) or ``"iou"`` (IoU >= 0.5)."""
    if criterion not in CRITERIA:
        raise ValueError(f"unknown criterion {criterion!r}; expected one of {CRITERIA}")
    _check_aligned(preds, gts)
    tp = fp = fn = 0
    for frame, boxes in zip(preds, gts):
        kept = [d for d in frame if _score(d) >= score_thresh]
        pb = np.array([_box(d) for d in kept], dtype=np.float64).reshape(-1, 4)
        sc = np.array([_score(d) for d in kept], dtype=np.float64)
        a, b, c = match_frame(pb, sc, np.asarray(boxes, dtype=np.float64).reshape(-1, 4), criterion)
        tp, fp, fn = tp + a, fp + b, fn + c
    return EvalReport.from_counts("localization", tp, fp, fn)


def group_by_frame(records: Sequence[dict]) -> dict:
    """JSONL records -> ``{(seq, frame): [record, ...]}``."""
    out: dict = {}
    for r in records:
        out.setdefault((r.get("seq"), int(r["frame"])), []).append(r)
    return out


def align_records(pred_records: Sequence[dict], gt_records: Sequence[dict]):
    """Pair prediction and ground-truth JSONL records frame by frame.

    Ground-truth records carry ``seq``, ``frame`` and ``boxes``; every listed
    frame is a unit of evaluation even when it has no boxes.  Predictions for
    frames absent from the ground truth are an index mismatch.
    """
    keys = [(g.get("seq"), int(g["frame"])) for g in gt_records]
    if len(set(keys)) != len(keys):
        raise ValueError("duplicate ground-truth frames")
    grouped = group_by_frame(pred_records)
    stray = set(grouped) - set(keys)
    if stray:
        raise ValueError(f"predictions for unknown frames: {sorted(stray, key=str)[:3]}")
    preds = [grouped.get(k, []) for k in keys]
    gts = [g["boxes"] for g in gt_records]
    return preds, gts


def format_table(rows: dict) -> str:
    """Console table: one row per method, detection and localization column groups."""
    head = f"{'method':<14}| {'Detection':^23} | {'Localization':^23}"
    sub = f"{'':<14}| {'P':>7} {'R':>7} {'F1':>7} | {'P':>7} {'R':>7} {'F1':>7}"
    lines = [head, sub, "-" * len(sub)]
    for name, (det, loc) in rows.items():
        cells = []
        for rep in (det, loc):
            cells.append("    n/a     n/a     n/a" if rep is None else
                         f"{rep.precision:7.1f} {rep.recall:7.1f} {rep.f1:7.1f}")
        lines.append(f"{name:<14}| {cells[0]} | {cells[1]}")
    return "\n".join(lines)
