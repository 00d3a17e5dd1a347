"""Transfer-strategy ablation: how much does an L-Net help or hurt a new task?

For each source (``noise``: memorised random labels, ``related``: the first
blob task) and each strategy, learn the source into an L-Net and then the
target with an S-Net wired to it. Reports the median target accuracy.

    python scripts/run_ablation.py
    python scripts/run_ablation.py --width 64 --depth 2 --lr 0.05 --curves curves.csv
"""

import argparse
import csv
import time

import numpy as np

from cmn import benchmarks
from cmn.baselines import run_transfer_ablation
from cmn.layers import tiny_mlp
from cmn.trainer import OptimizerConfig, RunConfig
from cmn.transfer import STRATEGIES


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=list(range(5)))
    ap.add_argument("--sources", nargs="+", default=["noise", "related"], choices=["noise", "related"])
    ap.add_argument("--strategies", nargs="+", default=list(STRATEGIES), choices=STRATEGIES)
    ap.add_argument("--width", type=int, help="override the benchmark backbone width")
    ap.add_argument("--depth", type=int, help="override the benchmark backbone depth")
    ap.add_argument("--lr", type=float, help="override the target-task learning rate")
    ap.add_argument("--curves", help="write per-epoch target accuracy to this CSV")
    args = ap.parse_args()

    body = benchmarks.ablation_body()
    if args.width or args.depth:
        hidden = body.layers
        body = tiny_mlp(body.input_shape[0], 1, args.width or hidden[0].n_out, args.depth or len(hidden))
    cfg = benchmarks.ablation_run_config()
    if args.lr:
        cfg = RunConfig(short=OptimizerConfig(lr=args.lr), long=cfg.long, eval_scope=cfg.eval_scope)

    curve_rows = []
    start = time.perf_counter()
    for source in args.sources:
        src_cfg = benchmarks.ablation_source_config(source)
        medians = {}
        for strategy in args.strategies:
            accs = []
            for seed in args.seeds:
                src, tgt = benchmarks.ablation_pair(seed, source)
                res = run_transfer_ablation(strategy, src, tgt, body, cfg, seed, src_cfg)
                accs.append(res.final_acc)
                curve_rows += [(source, strategy, seed, e + 1, a) for e, a in enumerate(res.curve)]
            medians[strategy] = float(np.median(accs))
            print(f"{source:8s} {strategy:7s} median {medians[strategy]:.3f}  per-seed {np.round(accs, 3).tolist()}")
        if "none" in medians:
            base = medians["none"]
            print(f"{source:8s} deltas vs none: " + "  ".join(
                f"{s} {100 * (v - base):+.1f}%" for s, v in medians.items() if s != "none"))
    print(f"{time.perf_counter() - start:.0f}s")
    if args.curves:
        with open(args.curves, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["source", "strategy", "seed", "epoch", "target_acc"])
            w.writerows(curve_rows)


if __name__ == "__main__":
    main()
