"""Score/box fusion and non-maximum suppression."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .targets import BBox, decode_delta, iou, iou_matrix

NMS_IOU = 0.6
NMS_SCORE = 0.05
NMS_MAX_DETS = 100


@dataclass(frozen=True)
class Detection:
    box: BBox
    score: float
    level: int = 0
    frame_index: int = 0

    def to_json(self, seq: str | None = None) -> dict:
        d = {"frame": self.frame_index, "x0": self.box.x0, "y0": self.box.y0,
             "x1": self.box.x1, "y1": self.box.y1, "score": self.score,
             "level": self.level}
        if seq is not None:
            d["seq"] = seq
        return d


def fuse_scores(static_score, score_offset):
    """Final confidence: static score times the temporal score offset."""
    return np.asarray(static_score) * np.asarray(score_offset)


def fuse_boxes(static_boxes: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Warp static boxes ``[..., 4]`` by predicted corner deltas ``[..., 4]``."""
    return decode_delta(static_boxes, deltas)


def _order(dets: Sequence[Detection]) -> list[int]:
    return sorted(range(len(dets)),
                  key=lambda i: (-dets[i].score, dets[i].box.x0, dets[i].box.y0))


def nms(dets: Sequence[Detection], iou_thresh: float = NMS_IOU, score_thresh: float = NMS_SCORE,
        max_dets: int = NMS_MAX_DETS) -> list[Detection]:
    """Greedy suppression over all levels jointly.

    Candidates below ``score_thresh`` are dropped first; ties in score are
    broken by ``x0`` then ``y0`` ascending.
    """
    dets = [d for d in dets if d.score >= score_thresh]
    if not dets:
        return []
    order = _order(dets)
    boxes = np.array([dets[i].box for i in order], dtype=np.float64)
    ious = iou_matrix(boxes, boxes)
    suppressed = np.zeros(len(order), dtype=bool)
    keep: list[Detection] = []
    for rank in range(len(order)):
        if suppressed[rank]:
            continue
        keep.append(dets[order[rank]])
        if len(keep) == max_dets:
            break
        suppressed |= ious[rank] > iou_thresh
    return keep


def nms_reference(dets: Sequence[Detection], iou_thresh: float = NMS_IOU,
                  score_thresh: float = NMS_SCORE, max_dets: int = NMS_MAX_DETS) -> list[Detection]:
    """Quadratic pure-Python NMS used as an oracle in tests."""
    remaining = [d for d in dets if d.score >= score_thresh]
    remaining = [remaining[i] for i in _order(remaining)]
    keep: list[Detection] = []
    while remaining and len(keep) < max_dets:
        best = remaining.pop(0)
        keep.append(best)
        remaining = [d for d in remaining if iou(best.box, d.box) <= iou_thresh]
    return keep


def detections_from_fields(scores: Sequence[np.ndarray], boxes: Sequence[np.ndarray],
                           frame_index: int = 0) -> list[Detection]:
    """Flatten per-level score ``[H, W]`` and box ``[H, W, 4]`` fields into detections."""
    out = []
    for level, (s, b) in enumerate(zip(scores, boxes)):
        s = np.asarray(s).reshape(-1)
        b = np.asarray(b).reshape(-1, 4)
        for i in np.nonzero(s >= NMS_SCORE)[0]:
            box = BBox(*map(float, b[i]))
            if box.is_valid():
                out.append(Detection(box, float(s[i]), level, frame_index))
    return out


def write_detections(path, dets_by_frame: Iterable, seq: str | None = None) -> None:
    with open(path, "w") as fh:
        for dets in dets_by_frame:
            for d in dets:
                fh.write(json.dumps(d.to_json(seq)) + "\n")


def read_detections(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def detection_from_json(d: dict) -> Detection:
    return Detection(BBox(d["x0"], d["y0"], d["x1"], d["y1"]), d["score"],
                     d.get("level", 0), d["frame"])
