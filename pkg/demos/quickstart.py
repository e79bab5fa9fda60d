"""Small end-to-end run: render data, train variant (e), detect, score, draw.

    python demos/quickstart.py --steps 300 --out /tmp/stft_demo

Everything goes through the ``stftdet`` command line, so the printed
commands can be replayed by hand.
"""

import argparse
import json
import os
import shlex

from stftdet.cli import dispatch


def run(*argv) -> None:
    argv = [str(a) for a in argv]
    print("$ stftdet", shlex.join(argv))
    code = dispatch(argv)
    if code:
        raise SystemExit(code)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", default="stft_demo")
    args = ap.parse_args()

    data, ckpt = os.path.join(args.out, "data"), os.path.join(args.out, "ckpt")
    preds = os.path.join(args.out, "preds.jsonl")
    run("gen", "--seed", args.seed, "--out", data)
    run("train", "--data", data, "--variant", "e", "--steps", args.steps, "--seed", args.seed,
        "--out", ckpt)
    run("infer", "--ckpt", ckpt, "--data", data, "--out", preds)
    gts = [os.path.join(data, s, "gt.jsonl") for s in ("test_00", "test_01")]
    report = os.path.join(args.out, "report.json")
    run("eval", "--preds", preds, "--gt", *gts, "--score-thresh", 0.3, "--out", report)
    run("overlay", "--data", data, "--seq", "test_00", "--preds", preds, "--score-thresh", 0.3,
        "--frames", 0, 15, 30, 45, "--out", os.path.join(args.out, "overlay"))
    with open(report) as fh:
        loc = json.load(fh)["localization"]
    print(f"localization P {loc['precision']:.1f} R {loc['recall']:.1f} F1 {loc['f1']:.1f}")


if __name__ == "__main__":
    main()
