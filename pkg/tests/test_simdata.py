import math
from collections import Counter

import numpy as np
import pytest

from stftdet.simdata import (
    SUPPORT_WINDOW,
    apply_annotation_ratio,
    apply_corruption,
    generate_benchmark,
    generate_sequence,
    gt_records,
    load_dataset,
    load_sequence,
    object_mask,
    sample_support_indices,
    save_dataset,
    save_sequence,
)
from stftdet.tensor import TensorFileError


@pytest.fixture(scope="module")
def seq():
    return generate_sequence(5, length=30, artifact_rate=0.5)


def test_no_artifacts_at_rate_zero():
    s = generate_sequence(3, length=20, artifact_rate=0.0)
    assert {f.corruption for f in s.frames} == {"none"}


def test_same_seed_byte_identical():
    a, b = generate_sequence(9, length=12), generate_sequence(9, length=12)
    assert all(x.image.tobytes() == y.image.tobytes() for x, y in zip(a.frames, b.frames))
    assert [x.gt_boxes for x in a.frames] == [y.gt_boxes for y in b.frames]
    c = generate_sequence(10, length=12)
    assert a.frames[0].image.tobytes() != c.frames[0].image.tobytes()


def test_images_are_unit_range_float32(seq):
    imgs = seq.images()
    assert imgs.dtype == np.float32 and imgs.shape == (30, 3, 64, 64)
    assert imgs.min() >= 0 and imgs.max() <= 1


def test_gt_box_contains_mask_centroid(seq):
    for f in seq.frames:
        mask = object_mask(seq, f.frame_index)
        if not f.gt_boxes:
            assert mask.max() <= 0.5
            continue
        ys, xs = np.nonzero(mask > 0.5)
        cx, cy = xs.mean() + 0.5, ys.mean() + 0.5
        x0, y0, x1, y1 = f.gt_boxes[0]
        assert x0 <= cx <= x1 and y0 <= cy <= y1
        # extents recomputed from the mask
        assert (x0, y0, x1, y1) == (xs.min(), ys.min(), xs.max() + 1, ys.max() + 1)


def test_corruption_kinds(rng):
    img = rng.random((3, 32, 32)).astype(np.float32)
    for kind in ("specular", "blur", "occlusion", "bubbles"):
        out = apply_corruption(img, kind, rng, None)
        assert out.shape == img.shape and not np.array_equal(out, img)
    with pytest.raises(ValueError):
        apply_corruption(img, "smoke", rng, None)


def test_invalid_arguments():
    with pytest.raises(ValueError):
        generate_sequence(1, length=0)
    with pytest.raises(ValueError):
        generate_sequence(1, artifact_rate=1.5)


def test_support_window_at_start():
    rng = np.random.default_rng(0)
    for _ in range(200):
        assert all(1 <= i <= 9 for i in sample_support_indices(0, 100, 2, rng))


def test_support_window_coverage():
    rng = np.random.default_rng(1)
    hits = Counter()
    for _ in range(10_000):
        hits.update(sample_support_indices(50, 100, 1, rng))
    expected = set(range(50 - SUPPORT_WINDOW, 50 + SUPPORT_WINDOW + 1)) - {50}
    assert set(hits) == expected


def test_two_supports_distinct():
    rng = np.random.default_rng(2)
    for t in range(0, 30, 3):
        a, b = sample_support_indices(t, 30, 2, rng)
        assert a != b


def test_single_frame_sequence_supports():
    assert sample_support_indices(0, 1, 3, np.random.default_rng(0)) == [0, 0, 0]


def test_sequence_round_trip(tmp_path, seq):
    save_sequence(seq, tmp_path / "s")
    back = load_sequence(tmp_path / "s")
    assert back.name == seq.name and back.params == seq.params
    for a, b in zip(seq.frames, back.frames):
        assert a.image.tobytes() == b.image.tobytes()
        assert [tuple(x) for x in a.gt_boxes] == [tuple(x) for x in b.gt_boxes]
        assert (a.corruption, a.annotated) == (b.corruption, b.annotated)


def test_truncated_frame_is_reported(tmp_path, seq):
    save_sequence(seq, tmp_path / "s")
    frame = tmp_path / "s" / "frames" / "000003.tensor"
    frame.write_bytes(frame.read_bytes()[:-7])
    with pytest.raises(TensorFileError, match="000003"):
        load_sequence(tmp_path / "s")


def test_dataset_round_trip(tmp_path):
    ds = generate_benchmark(4, n_train=1, n_test=1, length=5)
    save_dataset(ds, tmp_path / "d")
    back = load_dataset(tmp_path / "d")
    assert [s.name for s in back.sequences] == ["train_00", "test_00"]
    assert gt_records(back.sequences) == gt_records(ds.sequences)


@pytest.mark.parametrize("ratio", [1.0, 0.25, 0.1])
def test_annotation_ratio_counts(ratio):
    s = generate_sequence(2, length=60)
    apply_annotation_ratio(s, ratio)
    idx = [f.frame_index for f in s.frames if f.annotated]
    assert len(idx) == math.ceil(60 * ratio)
    assert len(set(np.diff(idx))) <= 1          # uniform spacing
    assert all(f.visible_boxes() == [] for f in s.frames if not f.annotated)


def test_benchmark_splits():
    ds = generate_benchmark(7, n_train=2, n_test=1, length=4)
    assert [s.split for s in ds.sequences] == ["train", "train", "test"]
    assert len(ds.split("test")) == 1
