"""Command-line driver: ``stftdet <command> [flags]``.

Exit codes: 0 on success, 1 on a usage error, 2 on a runtime error.  Every
command prints a JSON object naming the files it wrote.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Sequence

import numpy as np

from .gradsuite import CHECKS, format_results, run_suite
from .metrics import align_records, evaluate_detection, evaluate_localization, format_table
from .model import load_checkpoint, save_checkpoint
from .pipeline import VARIANTS, ModelState, TrainConfig, infer, run_ablation, train
from .postprocess import read_detections
from .simdata import generate_benchmark, load_dataset, save_dataset
from .tensor import NonFiniteError, TensorFileError, save_tensor

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _emit(doc: dict) -> None:
    print(json.dumps(doc, sort_keys=True))


def _write_json(path: str, doc) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _train_config(args) -> TrainConfig:
    base = {}
    if args.config:
        with open(args.config) as fh:
            base = json.load(fh)
        if not isinstance(base, dict):
            raise UsageError("config file must hold a JSON object")
    for key in ("variant", "steps", "seed", "annotation_ratio", "n_train", "n_infer", "lr"):
        val = getattr(args, key, None)
        if val is not None:
            base[key] = val
    try:
        return TrainConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _load_state(path: str) -> ModelState:
    arrays, meta = load_checkpoint(path)
    if meta.get("variant") not in VARIANTS:
        raise TensorFileError(f"{path}: checkpoint has no valid variant")
    state = ModelState.create(meta["variant"], 0)
    state.load_arrays(arrays)
    state.meta.update(meta)
    return state


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    ds = generate_benchmark(args.seed, args.n_train, args.n_test, args.len,
                            args.artifact_rate, args.size)
    save_dataset(ds, args.out)
    _emit({"dataset": args.out, "sequences": [s.name for s in ds.sequences]})
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _train_config(args)
    ds = load_dataset(args.data)
    log_path = os.path.join(args.out, "train_log.jsonl")
    os.makedirs(args.out, exist_ok=True)
    state, _ = train(cfg, ds.split("train"), log_path=log_path)
    save_checkpoint(args.out, state.named_parameters(),
                    {"variant": cfg.variant, "config": cfg.to_dict()})
    _emit({"checkpoint": args.out, "log": log_path})
    return EXIT_OK


def cmd_infer(args) -> int:
    state = _load_state(args.ckpt)
    ds = load_dataset(args.data)
    seqs = ds.split(args.split)
    if not seqs:
        raise UsageError(f"dataset has no {args.split!r} sequences")
    n_infer = args.n_infer or state.meta.get("config", {}).get("n_infer", 10)
    written = []
    with open(args.out, "w") as fh:
        for s in seqs:
            sink = None
            if args.dump_attention:
                sink = _attention_writer(os.path.join(args.dump_attention, s.name), written)
            for dets in infer(state, s, n_infer, args.seed, on_attention=sink):
                for d in dets:
                    fh.write(json.dumps(d.to_json(s.name), sort_keys=True) + "\n")
    out = {"detections": args.out}
    if args.dump_attention:
        out["attention"] = written
    _emit(out)
    return EXIT_OK


def _attention_writer(root: str, written: list):
    def sink(t: int, maps: list) -> None:
        for level, per_branch in enumerate(maps):
            for branch, arr in per_branch.items():
                path = os.path.join(root, f"{t:06d}_L{level}_{branch}.tensor")
                os.makedirs(root, exist_ok=True)
                save_tensor(path, np.ascontiguousarray(arr, dtype=np.float32))
                written.append(path)
    return sink


def _read_gt(paths: Sequence[str]) -> list[dict]:
    rows = []
    for p in paths:
        rows += read_detections(p)
    return rows


def cmd_eval(args) -> int:
    preds, gts = align_records(read_detections(args.preds), _read_gt(args.gt))
    det = loc = None
    if args.task in ("det", "both"):
        det = evaluate_detection(preds, gts, args.score_thresh)
    if args.task in ("loc", "both"):
        loc = evaluate_localization(preds, gts, args.score_thresh, args.criterion)
    report = {"score_thresh": args.score_thresh, "criterion": args.criterion}
    if det:
        report["detection"] = det.as_dict()
    if loc:
        report["localization"] = loc.as_dict()
    print(format_table({os.path.basename(args.preds): (det, loc)}), file=sys.stderr)
    if args.out:
        _write_json(args.out, report)
        _emit({"report": args.out})
    else:
        _emit(report)
    return EXIT_OK


def cmd_ablate(args) -> int:
    ds = load_dataset(args.data)
    rows, table = [], {}
    for v in args.variant:
        args_v = argparse.Namespace(**{**vars(args), "variant": v})
        res = run_ablation(v, _train_config(args_v), ds)
        rows.append(res.as_dict())
        table[v] = (res.detection, res.localization)
    print(format_table(table), file=sys.stderr)
    _write_json(args.out, {"dataset": ds.params, "rows": rows})
    _emit({"report": args.out})
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    ops = None if args.ops == ["all"] else args.ops
    unknown = [o for o in (ops or []) if o not in CHECKS]
    if unknown:
        raise UsageError(f"unknown ops {unknown}; choose from {sorted(CHECKS)}")
    results = run_suite(ops, args.instances, args.seed)
    print(format_results(results), file=sys.stderr)
    doc = {r.op: {"max_error": r.max_error, "passed": r.passed} for r in results}
    if args.out:
        _write_json(args.out, doc)
        _emit({"report": args.out})
    else:
        _emit(doc)
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


# ---------------------------------------------------------------------------
# overlay
# ---------------------------------------------------------------------------

GT_COLOR = (0, 255, 0)
PRED_COLOR = (255, 40, 40)


def draw_box(img: np.ndarray, box, color, scale: int) -> None:
    """Burn a 1-pixel rectangle (in upscaled pixels) into ``img [H, W, 3]`` in place."""
    h, w = img.shape[:2]
    x0, y0, x1, y1 = (int(round(v * scale)) for v in box)
    x0, x1 = np.clip([x0, x1 - 1], 0, w - 1)
    y0, y1 = np.clip([y0, y1 - 1], 0, h - 1)
    img[y0, x0:x1 + 1] = color
    img[y1, x0:x1 + 1] = color
    img[y0:y1 + 1, x0] = color
    img[y0:y1 + 1, x1] = color


def write_ppm(path: str, rgb: np.ndarray) -> None:
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


def render_frame(image: np.ndarray, gt_boxes, pred_boxes, scale: int = 4) -> np.ndarray:
    """``image [3, H, W]`` in [0, 1] -> upscaled ``uint8 [H*s, W*s, 3]`` with boxes."""
    rgb = (np.clip(image, 0, 1).transpose(1, 2, 0) * 255 + 0.5).astype(np.uint8)
    rgb = np.repeat(np.repeat(rgb, scale, axis=0), scale, axis=1)
    for b in gt_boxes:
        draw_box(rgb, b, GT_COLOR, scale)
    for b in pred_boxes:
        draw_box(rgb, b, PRED_COLOR, scale)
    return rgb


def cmd_overlay(args) -> int:
    ds = load_dataset(args.data)
    byname = {s.name: s for s in ds.sequences}
    if args.seq not in byname:
        raise UsageError(f"no sequence {args.seq!r}; have {sorted(byname)}")
    seq = byname[args.seq]
    preds: dict = {}
    if args.preds:
        for r in read_detections(args.preds):
            if r.get("seq", args.seq) == args.seq and r["score"] >= args.score_thresh:
                preds.setdefault(int(r["frame"]), []).append((r["x0"], r["y0"], r["x1"], r["y1"]))
    frames = args.frames if args.frames else range(len(seq))
    os.makedirs(args.out, exist_ok=True)
    written = []
    for t in frames:
        if not 0 <= t < len(seq):
            raise UsageError(f"frame {t} outside 0..{len(seq) - 1}")
        f = seq.frames[t]
        rgb = render_frame(f.image, [tuple(b) for b in f.gt_boxes], preds.get(t, []), args.scale)
        path = os.path.join(args.out, f"{seq.name}_{t:06d}.ppm")
        write_ppm(path, rgb)
        written.append(path)
    _emit({"images": written})
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_train_flags(p) -> None:
    p.add_argument("--config", help="JSON file mirroring TrainConfig")
    p.add_argument("--steps", type=int, help="training steps (overrides config)")
    p.add_argument("--seed", type=int, help="random seed (overrides config)")
    p.add_argument("--annotation-ratio", dest="annotation_ratio", type=float,
                   help="fraction of target frames with labels")
    p.add_argument("--n-train", dest="n_train", type=int, help="support frames in training")
    p.add_argument("--n-infer", dest="n_infer", type=int, help="support frames at inference")
    p.add_argument("--lr", type=float, help="learning rate")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stftdet", description="Video detector with temporal feature aggregation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="render the synthetic benchmark")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--len", type=int, default=60, help="frames per sequence")
    p.add_argument("--artifact-rate", dest="artifact_rate", type=float, default=0.3)
    p.add_argument("--n-train", dest="n_train", type=int, default=4)
    p.add_argument("--n-test", dest="n_test", type=int, default=2)
    p.add_argument("--size", type=int, default=64, help="image side in pixels")
    p.add_argument("--out", required=True, help="dataset directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train one variant on the train split")
    p.add_argument("--data", required=True)
    p.add_argument("--variant", choices=VARIANTS)
    _add_train_flags(p)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="detect on every frame of a split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--n-infer", dest="n_infer", type=int)
    p.add_argument("--seed", type=int, default=0, help="support-frame draw seed")
    p.add_argument("--dump-attention", dest="dump_attention", metavar="DIR",
                   help="write per-frame attention maps as tensor files")
    p.add_argument("--out", required=True, help="detections JSONL")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score detections against ground truth")
    p.add_argument("--preds", required=True)
    p.add_argument("--gt", required=True, nargs="+", help="one or more gt.jsonl files")
    p.add_argument("--task", choices=("det", "loc", "both"), default="both")
    p.add_argument("--score-thresh", dest="score_thresh", type=float, default=0.5)
    p.add_argument("--criterion", choices=("centroid", "iou"), default="centroid")
    p.add_argument("--out", help="report JSON (printed when omitted)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and score variants, Table-2 style")
    p.add_argument("--variant", nargs="+", choices=VARIANTS, default=["e"])
    p.add_argument("--data", required=True)
    _add_train_flags(p)
    p.add_argument("--out", required=True, help="report JSON")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--ops", nargs="+", default=["all"])
    p.add_argument("--instances", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="report JSON (printed when omitted)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("overlay", help="render frames with boxes as PPM images")
    p.add_argument("--data", required=True)
    p.add_argument("--seq", required=True)
    p.add_argument("--preds", help="detections JSONL")
    p.add_argument("--score-thresh", dest="score_thresh", type=float, default=0.5)
    p.add_argument("--frames", type=int, nargs="*")
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--out", required=True, help="image directory")
    p.set_defaults(func=cmd_overlay)
    return parser


def dispatch(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:          # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except (OSError, ValueError, KeyError, TensorFileError, NonFiniteError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(dispatch())
