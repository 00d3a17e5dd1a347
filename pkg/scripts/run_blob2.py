"""CMN against fine-tuning on the two-task blob benchmark.

Prints per-seed and median BWT / AF / ACC, the quantities behind the
forgetting and AF-sign acceptance checks.

    python scripts/run_blob2.py --seeds 0 1 2 3 4
"""

import argparse
import json

import numpy as np

from cmn import benchmarks
from cmn.baselines import joint_reference, run_baseline
from cmn.metrics import BaselineAccuracies, acc, af, bwt
from cmn.trainer import run_sequence


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=list(range(5)))
    ap.add_argument("--json", help="also write the per-seed numbers here")
    args = ap.parse_args()

    body, cfg = benchmarks.blob2_body(), benchmarks.blob2_run_config()
    rows = []
    for seed in args.seeds:
        tasks = benchmarks.blob2_tasks(seed)
        R_cmn = run_sequence(tasks, body, cfg, seed).R
        R_ft = run_baseline("finetune", tasks, body, cfg, seed).R
        ref = BaselineAccuracies(m=run_baseline("one", tasks, body, cfg, seed).accuracies,
                                 n=joint_reference(tasks, body, cfg, seed))
        row = {"seed": seed}
        for name, R in (("cmn", R_cmn), ("finetune", R_ft)):
            row[name] = {"ACC": acc(R), "BWT": bwt(R), "AF": af(R, ref), "R": R.tolist()}
        rows.append(row)
        print(f"seed {seed}: " + "  ".join(
            f"{n} BWT {row[n]['BWT']:+.3f} AF {100 * row[n]['AF']:+.2f} ACC {row[n]['ACC']:.3f}"
            for n in ("cmn", "finetune")))

    for name in ("cmn", "finetune"):
        med = {k: float(np.median([r[name][k] for r in rows])) for k in ("ACC", "BWT", "AF")}
        print(f"median {name:9s} ACC {med['ACC']:.3f}  BWT {med['BWT']:+.3f}  AF {100 * med['AF']:+.2f}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2, default=lambda v: None)


if __name__ == "__main__":
    main()
