"""Acceptance criteria, one test each.

Every test prints a ``PASS``/``FAIL`` line with the measured numbers.  The
end-to-end criteria (6-8) share trained models through a module cache; the
full module takes roughly half an hour on one CPU core.
"""

import json
import time

import numpy as np
import pytest

from stftdet.gradsuite import run_suite
from stftdet.metrics import evaluate_detection, evaluate_localization, f1_score
from stftdet.model import save_checkpoint
from stftdet.pipeline import TrainConfig, run_ablation, train
from stftdet.pipeline.ablation import evaluate_state
from stftdet.postprocess import nms
from stftdet.simdata import generate_benchmark, save_dataset
from stftdet.spatial import deform_conv
from stftdet.targets import assign_temporal, decode_delta, decode_static_box, encode_delta, \
    encode_static_targets
from stftdet.temporal import channel_aware_aggregate
from stftdet.tensor import Tensor, conv2d

from test_postprocess import oracle_nms, random_dets
from test_targets import brute_assign, random_boxes

STEPS = 2000
SWEEP = (2, 6, 10, 14, 18)
RATIOS = (1.0, 0.25, 0.1)


@pytest.fixture
def verdict(capsys):
    def report(number: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
        assert ok, detail
    return report


# ---------------------------------------------------------------------------
# shared trained models
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def benchmark():
    return generate_benchmark(seed=7, n_train=4, n_test=2, length=60, artifact_rate=0.3,
                              image_size=64)


_MODELS: dict = {}


def trained(dataset, variant: str, ratio: float = 1.0):
    """Train once per (variant, ratio); returns ``(result, state, seconds)``."""
    key = (variant, ratio)
    if key not in _MODELS:
        cfg = TrainConfig(variant=variant, steps=STEPS, annotation_ratio=ratio)
        t0 = time.perf_counter()
        state, _ = train(cfg, dataset.split("train"))
        seconds = time.perf_counter() - t0
        _MODELS[key] = (run_ablation(variant, cfg, dataset, state=state), state, seconds)
    return _MODELS[key]


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------

def test_c1_gradient_suite(verdict):
    t0 = time.perf_counter()
    results = run_suite(instances=3, seed=0)
    elapsed = time.perf_counter() - t0
    worst = max(results, key=lambda r: r.max_error)
    ok = all(r.passed for r in results) and elapsed < 120
    verdict(1, ok, f"{len(results)} ops, worst {worst.op} {worst.max_error:.2e}, {elapsed:.1f}s")


def test_c2_identity_reductions(verdict):
    rng = np.random.default_rng(2)
    conv_err = 0.0
    for _ in range(20):
        f = rng.normal(size=(2, 4, 7, 6)).astype(np.float32)
        w = rng.normal(size=(5, 4, 3, 3)).astype(np.float32)
        b = rng.normal(size=5).astype(np.float32)
        got = deform_conv(f, np.zeros((2, 18, 7, 6), np.float32), w, b).data
        conv_err = max(conv_err, float(np.abs(got - conv2d(f, w, b).data).max()))
    exact = True
    for _ in range(20):
        f = rng.normal(size=(1, 5, 5)) * rng.uniform(0.1, 50)
        exact &= np.array_equal(channel_aware_aggregate(Tensor(f), [Tensor(f)],
                                                        include_target=False).data, f)
    row_err = 0.0
    for _ in range(50):
        c, n, hw = rng.integers(1, 9), rng.integers(0, 6), rng.integers(1, 6)
        scale = rng.uniform(0.01, 40)
        f = Tensor(scale * rng.normal(size=(c, hw, hw)))
        sups = [Tensor(scale * rng.normal(size=(c, hw, hw))) for _ in range(n)]
        _, attn = channel_aware_aggregate(f, sups, return_attention=True)
        row_err = max(row_err, float(np.abs(attn.data.sum(-1) - 1).max()))
    ok = conv_err <= 1e-5 and exact and row_err <= 1e-5
    verdict(2, ok, f"zero-offset deform vs conv {conv_err:.1e}, C=1 identity exact={exact}, "
                   f"row-sum error {row_err:.1e}")


def test_c3_encoding_round_trips(verdict):
    rng = np.random.default_rng(3)
    boxes = random_boxes(rng, 1000, 0, 64, 2)
    pts = np.stack([rng.uniform(boxes[:, 0], boxes[:, 2]), rng.uniform(boxes[:, 1], boxes[:, 3])], 1)
    static_err = 0.0
    for box, (x, y) in zip(boxes, pts):
        # a 1x1 stride-1 grid puts the single location at (0.5, 0.5)
        shifted = box - np.array([x, y, x, y]) + 0.5
        labels, g = encode_static_targets([shifted], (1, 1), 1)
        dec = np.array(decode_static_box((x, y), g[:, 0, 0]))
        static_err = max(static_err, float(np.abs(dec - box).max())) if labels[0, 0] else np.inf
    y, g = random_boxes(rng, 1000), random_boxes(rng, 1000)
    delta_err = float(np.abs(decode_delta(y, encode_delta(y, g)) - g).max())
    worked = tuple(float(v) for v in encode_delta((0, 0, 4, 4), (1, 1, 5, 5), 0.5))
    ok = static_err <= 1e-5 and delta_err <= 1e-5 and worked == (0.5, 0.5, 0.5, 0.5)
    verdict(3, ok, f"static {static_err:.1e}, delta {delta_err:.1e}, worked example {worked}")


def test_c4_oracle_equivalence(verdict):
    rng = np.random.default_rng(4)
    assign_ok = 0
    for _ in range(100):
        gts = random_boxes(rng, int(rng.integers(0, 4)), 0, 64, 4)
        if len(gts):
            boxes = gts[rng.integers(0, len(gts), size=(6, 6))] + rng.normal(0, 6, size=(6, 6, 4))
        else:
            c = rng.uniform(0, 64, size=(6, 6, 2))
            boxes = np.concatenate([c - 5, c + 5], axis=-1)
        boxes[..., 2:] = np.maximum(boxes[..., 2:], boxes[..., :2] + 0.5)
        labels, deltas, _ = assign_temporal(boxes, gts)
        ref_labels, ref_deltas = brute_assign(boxes, gts)
        assign_ok += bool(np.array_equal(labels, ref_labels) and
                          np.allclose(deltas, ref_deltas, rtol=0, atol=1e-12))
    nms_ok = 0
    for _ in range(100):
        dets = random_dets(rng, int(rng.integers(0, 60)))
        nms_ok += nms(dets) == oracle_nms(dets)
    verdict(4, assign_ok == 100 and nms_ok == 100,
            f"assignment {assign_ok}/100, NMS {nms_ok}/100 identical to brute force")


def test_c5_metric_fidelity(verdict):
    f1 = f1_score(95.0, 88.0)
    gts = [[[0, 0, 10, 10]], [], [[5, 5, 9, 9], [20, 20, 30, 30]]]
    perfect = [[{"x0": b[0], "y0": b[1], "x1": b[2], "y1": b[3], "score": 0.9} for b in f] for f in gts]
    empty = [[] for _ in gts]
    reps = [evaluate_detection(perfect, gts), evaluate_localization(perfect, gts)]
    full = all((r.precision, r.recall, r.f1) == (100.0, 100.0, 100.0) for r in reps)
    reps = [evaluate_detection(empty, gts), evaluate_localization(empty, gts)]
    none = all((r.precision, r.recall) == (0.0, 0.0) for r in reps)
    verdict(5, abs(f1 - 91.4) <= 0.05 and full and none,
            f"F1(95, 88) = {f1:.3f}, perfect 100/100/100 {full}, empty P=R=0 {none}")


def test_c6_ablation_ordering(verdict, benchmark):
    res = {v: trained(benchmark, v) for v in ("a", "b", "c", "e")}
    f1 = {v: r[0].localization.f1 for v, r in res.items()}
    minutes = sum(r[2] for r in res.values()) / 60
    ok = f1["e"] - f1["a"] >= 5 and f1["c"] - f1["b"] >= 5 and minutes < 30
    verdict(6, ok, "loc F1 " + ", ".join(f"{v}={x:.1f}" for v, x in f1.items()) +
            f"; e-a {f1['e'] - f1['a']:+.1f}, c-b {f1['c'] - f1['b']:+.1f}; "
            f"training {minutes:.1f} min")


def test_c7_support_frame_stability(verdict, benchmark):
    result, state, _ = trained(benchmark, "e")
    cfg = TrainConfig(variant="e")
    scores = [evaluate_state(state, benchmark, cfg, threshold=result.threshold, n_infer=n)[1].f1
              for n in SWEEP]
    spread = max(scores) - min(scores)
    verdict(7, spread <= 2.0, "loc F1 by N_infer " +
            ", ".join(f"{n}:{s:.1f}" for n, s in zip(SWEEP, scores)) + f"; spread {spread:.2f}")


def test_c8_sparse_annotation(verdict, benchmark):
    f1 = {r: trained(benchmark, "e", r)[0].localization.f1 for r in RATIOS}
    gap = max(abs(f1[r] - f1[1.0]) for r in RATIOS)
    verdict(8, gap <= 4.0, "loc F1 by ratio " +
            ", ".join(f"{r:g}:{x:.1f}" for r, x in f1.items()) + f"; largest gap {gap:.2f}")


def _tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file()}


def test_c9_determinism(verdict, tmp_path):
    runs = []
    for k in range(2):
        root = tmp_path / f"run{k}"
        ds = generate_benchmark(seed=7, n_train=1, n_test=1, length=12)
        save_dataset(ds, root / "data")
        cfg = TrainConfig(variant="e", steps=20, n_infer=4)
        state, _ = train(cfg, ds.split("train"), log_path=root / "log.jsonl")
        save_checkpoint(root / "ckpt", state.named_parameters(), {"variant": "e"})
        report = run_ablation("e", cfg, ds, state=state).as_dict()
        (root / "report.json").write_text(json.dumps(report, sort_keys=True))
        runs.append(_tree_bytes(root))
    same = {part: all(v == runs[1].get(k) for k, v in runs[0].items() if k.startswith(part))
            for part in ("data", "ckpt", "log.jsonl", "report.json")}
    ok = all(same.values()) and runs[0].keys() == runs[1].keys()
    verdict(9, ok, ", ".join(f"{k} identical={v}" for k, v in same.items()) +
            f" ({len(runs[0])} files)")
