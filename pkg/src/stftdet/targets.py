"""Box geometry, static (per-location distance) targets and temporal assignment.

Boxes are ``(x0, y0, x1, y1)`` in image pixels.  Array versions of every
routine work on trailing axes of size 4 so a whole level can be handled at
once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

SIGMA = 0.5
TEMPORAL_IOU_THRESH = 0.3
LEVEL_SIZE_RANGES = ((0.0, 32.0), (32.0, np.inf))


class BBox(NamedTuple):
    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return max(self.width, 0.0) * max(self.height, 0.0)

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    def is_valid(self) -> bool:
        return self.x0 < self.x1 and self.y0 < self.y1


def _require_valid(box, what: str = "box") -> None:
    if not (box[0] < box[2] and box[1] < box[3]):
        raise ValueError(f"degenerate {what}: {tuple(box)}")


def iou(a, b) -> float:
    """Intersection over union of two boxes; 0 when they do not overlap."""
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union) if union > 0 else 0.0


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between ``a [N, 4]`` and ``b [M, 4]`` -> ``[N, M]``."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = np.clip(a[:, 2] - a[:, 0], 0, None) * np.clip(a[:, 3] - a[:, 1], 0, None)
    area_b = np.clip(b[:, 2] - b[:, 0], 0, None) * np.clip(b[:, 3] - b[:, 1], 0, None)
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out


# ---------------------------------------------------------------------------
# location grid and static targets
# ---------------------------------------------------------------------------

def location_grid(height: int, width: int, stride: int) -> np.ndarray:
    """Image points of the cell centers, ``[H, W, 2]`` as ``(x, y)``."""
    ys = stride * (np.arange(height) + 0.5)
    xs = stride * (np.arange(width) + 0.5)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy], axis=-1)


def encode_static_targets(gts: Sequence, grid_hw: tuple[int, int], stride: int,
                          size_range: tuple[float, float] = (0.0, np.inf)):
    """Distances from each cell's image point to the four box boundaries.

    Returns ``(labels [H, W] int, g [4, H, W])``.  A location is positive if
    it lies inside (or on the border of) a box and the largest distance falls
    in ``size_range`` (lower bound exclusive, upper inclusive).  With several
    candidate boxes the one of smallest area wins.  ``gts`` may be one box or
    a list of boxes.
    """
    gts = np.asarray(gts, dtype=np.float64).reshape(-1, 4)
    H, W = grid_hw
    labels = np.zeros((H, W), dtype=np.int64)
    g = np.zeros((4, H, W), dtype=np.float64)
    if len(gts) == 0:
        return labels, g
    for box in gts:
        _require_valid(box, "ground-truth box")
    pts = location_grid(H, W, stride)
    x, y = pts[..., 0][..., None], pts[..., 1][..., None]
    ltrb = np.stack([x - gts[:, 0], y - gts[:, 1], gts[:, 2] - x, gts[:, 3] - y], axis=0)  # [4,H,W,K]
    inside = ltrb.min(axis=0) >= 0
    m = ltrb.max(axis=0)
    lo, hi = size_range
    ok = inside & (m > lo) & (m <= hi) if lo > 0 else inside & (m <= hi)
    areas = (gts[:, 2] - gts[:, 0]) * (gts[:, 3] - gts[:, 1])
    cost = np.where(ok, areas[None, None, :], np.inf)
    best = cost.argmin(axis=-1)
    labels[:] = np.isfinite(cost.min(axis=-1))
    g = np.take_along_axis(ltrb, best[None, :, :, None], axis=-1)[..., 0]
    if len(gts) == 1:
        # keep the raw distances everywhere so a single box round-trips
        g = ltrb[..., 0]
    return labels, g


def decode_static_box(location, p) -> BBox:
    x, y = location
    l, t, r, b = p
    return BBox(x - l, y - t, x + r, y + b)


def decode_proposals(p: np.ndarray, stride: int) -> np.ndarray:
    """Proposal field ``[4, H, W]`` -> boxes ``[H, W, 4]``."""
    p = np.asarray(p)
    pts = location_grid(p.shape[1], p.shape[2], stride)
    x, y = pts[..., 0], pts[..., 1]
    return np.stack([x - p[0], y - p[1], x + p[2], y + p[3]], axis=-1)


# ---------------------------------------------------------------------------
# temporal deltas
# ---------------------------------------------------------------------------

def encode_delta(y_t, gt, sigma: float = SIGMA) -> np.ndarray:
    """Corner offsets from a predicted box to its target, scaled by size and ``sigma``.

    Works on single boxes or stacks ``[..., 4]``.
    """
    y_t = np.asarray(y_t, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    w = y_t[..., 2] - y_t[..., 0]
    h = y_t[..., 3] - y_t[..., 1]
    if np.any(w <= 0) or np.any(h <= 0):
        raise ValueError("encode_delta needs a predicted box of positive size")
    scale = np.stack([w, h, w, h], axis=-1) * sigma
    return (gt - y_t) / scale


def decode_delta(y_t, delta, sigma: float = SIGMA) -> np.ndarray:
    """Inverse of :func:`encode_delta`."""
    y_t = np.asarray(y_t, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    w = y_t[..., 2] - y_t[..., 0]
    h = y_t[..., 3] - y_t[..., 1]
    return y_t + delta * np.stack([w, h, w, h], axis=-1) * sigma


# ---------------------------------------------------------------------------
# assignment over a pyramid
# ---------------------------------------------------------------------------

@dataclass
class LevelAssignment:
    static_label: np.ndarray     # [H, W] {0,1}
    static_target: np.ndarray    # [4, H, W]
    temporal_label: np.ndarray   # [H, W] {0,1}
    temporal_target: np.ndarray  # [4, H, W]


@dataclass
class AssignmentResult:
    levels: list = field(default_factory=list)

    @property
    def n_pos(self) -> int:
        return int(sum(lv.temporal_label.sum() for lv in self.levels))

    @property
    def n_pos_static(self) -> int:
        return int(sum(lv.static_label.sum() for lv in self.levels))


def assign_temporal(boxes: np.ndarray, gts: Sequence, thresh: float = TEMPORAL_IOU_THRESH,
                    sigma: float = SIGMA):
    """Temporal labels and deltas for a field of decoded static boxes.

    ``boxes`` is ``[..., 4]``.  A location is positive when its box overlaps
    some ground truth with IoU strictly above ``thresh``; its target is the
    delta to the ground truth of highest IoU.  Returns
    ``(labels [...], deltas [..., 4], n_pos)``.
    """
    boxes = np.asarray(boxes, dtype=np.float64)
    lead = boxes.shape[:-1]
    flat = boxes.reshape(-1, 4)
    labels = np.zeros(flat.shape[0], dtype=np.int64)
    deltas = np.zeros((flat.shape[0], 4), dtype=np.float64)
    gts = np.asarray(gts, dtype=np.float64).reshape(-1, 4)
    if len(gts) and len(flat):
        ious = iou_matrix(flat, gts)
        best = ious.argmax(axis=1)
        pos = ious[np.arange(len(flat)), best] > thresh
        labels[pos] = 1
        if pos.any():
            deltas[pos] = encode_delta(flat[pos], gts[best[pos]], sigma)
    return labels.reshape(lead), deltas.reshape(lead + (4,)), int(labels.sum())


def assign_frame(gts: Sequence, proposals: Sequence[np.ndarray], strides: Sequence[int],
                 size_ranges=LEVEL_SIZE_RANGES) -> AssignmentResult:
    """Static and temporal targets for one frame across all pyramid levels.

    ``proposals`` holds the (detached) static proposal field ``[4, H, W]`` of
    each level.
    """
    result = AssignmentResult()
    gts = np.asarray(gts, dtype=np.float64).reshape(-1, 4)
    for p, s, rng in zip(proposals, strides, size_ranges):
        H, W = p.shape[1:]
        s_lab, s_tgt = encode_static_targets(gts, (H, W), s, rng)
        if len(gts) == 0:
            s_tgt = np.zeros_like(s_tgt)
        boxes = decode_proposals(p, s)
        t_lab, t_delta, _ = assign_temporal(boxes, gts)
        result.levels.append(LevelAssignment(s_lab, s_tgt, t_lab, t_delta.transpose(2, 0, 1)))
    return result
