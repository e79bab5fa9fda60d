import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stftdet.postprocess import (
    Detection,
    detection_from_json,
    detections_from_fields,
    fuse_boxes,
    fuse_scores,
    nms,
    nms_reference,
    read_detections,
    write_detections,
)
from stftdet.targets import BBox, decode_delta


def overlap(a, b):
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    return inter / ((a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter)


def oracle_nms(dets, iou_thresh=0.6, score_thresh=0.05, max_dets=100):
    """Independent greedy suppression: repeatedly take the best survivor."""
    alive = [d for d in dets if d.score >= score_thresh]
    keep = []
    while alive and len(keep) < max_dets:
        best = max(alive, key=lambda d: (d.score, -d.box.x0, -d.box.y0))
        keep.append(best)
        alive = [d for d in alive if d is not best and overlap(best.box, d.box) <= iou_thresh]
    return keep


def random_dets(rng, n):
    out = []
    for _ in range(n):
        x0, y0 = rng.uniform(0, 50, 2)
        w, h = rng.uniform(2, 20, 2)
        # coarse scores make ties common
        out.append(Detection(BBox(x0, y0, x0 + w, y0 + h), float(rng.integers(1, 20)) / 20))
    return out


def test_fuse_score_examples():
    assert fuse_scores(0.8, 0.5) == pytest.approx(0.4)
    assert fuse_scores(0.37, 1.0) == pytest.approx(0.37)


def test_fused_score_never_exceeds_inputs():
    g = np.linspace(0, 1, 101)
    s, o = np.meshgrid(g, g)
    assert np.all(fuse_scores(s, o) <= np.minimum(s, o) + 1e-15)


def test_fuse_boxes_examples():
    boxes = np.array([[[0, 0, 4, 4], [2, 2, 6, 9]]], float)
    np.testing.assert_array_equal(fuse_boxes(boxes, np.zeros_like(boxes)), boxes)
    out = fuse_boxes(np.array([0, 0, 4, 4.0]), np.array([0.5, 0.5, 0.5, 0.5]))
    np.testing.assert_allclose(out, (1, 1, 5, 5))


def test_fuse_boxes_field_matches_scalar(rng):
    xy = rng.uniform(0, 30, size=(3, 4, 2))
    boxes = np.concatenate([xy, xy + rng.uniform(1, 10, size=(3, 4, 2))], axis=-1)
    deltas = rng.normal(size=(3, 4, 4))
    field = fuse_boxes(boxes, deltas)
    for i, j in itertools.product(range(3), range(4)):
        np.testing.assert_allclose(field[i, j], decode_delta(boxes[i, j], deltas[i, j]))


def test_nms_examples():
    a = Detection(BBox(0, 0, 10, 10), 0.9)
    b = Detection(BBox(0, 0, 10, 9), 0.8)     # IoU 0.9 with a
    c = Detection(BBox(30, 30, 40, 40), 0.7)
    assert nms([a, b]) == [a]
    assert nms([b, c]) == [b, c]


def test_nms_score_floor_and_cap(rng):
    dets = [Detection(BBox(i * 20, 0, i * 20 + 10, 10), 0.5) for i in range(120)]
    assert len(nms(dets)) == 100
    assert nms([Detection(BBox(0, 0, 1, 1), 0.04)]) == []


def test_nms_matches_oracle_100_instances():
    rng = np.random.default_rng(11)
    for _ in range(100):
        dets = random_dets(rng, int(rng.integers(0, 50)))
        want = oracle_nms(dets)
        assert nms(dets) == want
        assert nms_reference(dets) == want


@given(st.integers(0, 10_000), st.floats(0.1, 0.9))
def test_nms_survivors_are_separated(seed, thresh):
    dets = random_dets(np.random.default_rng(seed), 30)
    kept = nms(dets, iou_thresh=thresh)
    for a, b in itertools.combinations(kept, 2):
        assert overlap(a.box, b.box) <= thresh
    assert [d.score for d in kept] == sorted((d.score for d in kept), reverse=True)


def test_detections_from_fields_filters(rng):
    scores = [np.array([[0.01, 0.5]]), np.array([[0.9]])]
    boxes = [np.array([[[0, 0, 2, 2], [1, 1, 3, 3]]], float), np.array([[[5, 5, 5, 9]]], float)]
    dets = detections_from_fields(scores, boxes, frame_index=3)
    assert len(dets) == 1 and dets[0].score == 0.5 and dets[0].frame_index == 3


def test_jsonl_round_trip(tmp_path, rng):
    frames = []
    for t in range(3):
        x0, y0 = rng.uniform(0, 40, 2)
        frames.append([Detection(BBox(x0, y0, x0 + 3.25, y0 + 1 / 3), float(rng.random()), t % 2, t)])
    path = tmp_path / "dets.jsonl"
    write_detections(path, frames, seq="s0")
    rows = read_detections(path)
    assert all(r["seq"] == "s0" for r in rows)
    assert [detection_from_json(r) for r in rows] == [d for f in frames for d in f]
