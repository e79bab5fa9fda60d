"""Support-frame and annotation-ratio sweeps for variant (e).

    python demos/sweeps.py --steps 2000

The support sweep reuses one trained model and keeps its calibrated score
threshold fixed, so only the number of aggregated frames changes.
"""

import argparse

from stftdet.pipeline import TrainConfig, run_ablation, train
from stftdet.pipeline.ablation import evaluate_state
from stftdet.simdata import generate_benchmark


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--supports", type=int, nargs="+", default=[2, 6, 10, 14, 18])
    ap.add_argument("--ratios", type=float, nargs="+", default=[1.0, 0.25, 0.1])
    args = ap.parse_args()

    ds = generate_benchmark(7)
    for ratio in args.ratios:
        cfg = TrainConfig(variant="e", steps=args.steps, annotation_ratio=ratio)
        state, _ = train(cfg, ds.split("train"))
        res = run_ablation("e", cfg, ds, state=state)
        print(f"annotation ratio {ratio:g}: loc F1 {res.localization.f1:.1f}", flush=True)
        if ratio == 1.0:
            for n in args.supports:
                loc = evaluate_state(state, ds, cfg, threshold=res.threshold, n_infer=n)[1]
                print(f"  N_infer {n:2d}: loc F1 {loc.f1:.1f}", flush=True)


if __name__ == "__main__":
    main()
