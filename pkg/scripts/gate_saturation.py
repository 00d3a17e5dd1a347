"""Inspect recall-gate pre-activations in the transfer ablation.

With the gate embeddings initialised to constant 1, each pre-activation is
the plain sum of every pooled feature of both networks. On ReLU features of
width 128 that sum lands far out on the sigmoid's flat tail, so the gate is
fully open and receives no gradient. This script prints, per hidden layer,
the median pre-activation and the largest sigmoid slope before and after
target training.

    python scripts/gate_saturation.py --seeds 0 1
"""

import argparse

import numpy as np

from cmn import benchmarks
from cmn import model as M
from cmn import tensor as T
from cmn.layers import layer_forward, linear
from cmn.tasks import TaskSequence
from cmn.tensor import Tensor
from cmn.trainer import train_short_phase
from cmn.transfer import frozen_features, integrate


def gate_stats(state, x):
    l_hidden = frozen_features(state.l_params, x)
    h, out = x, []
    for i, cell in enumerate(state.cells):
        h = layer_forward(state.s_params, i, h)
        pre = T.add(T.add(linear(l_hidden[i], cell.e_bar), linear(h, cell.e_tilde)), cell.bias).data
        g = 1.0 / (1.0 + np.exp(-pre.astype(np.float64)))
        out.append((float(np.median(pre)), float((g * (1 - g)).max())))
        h = integrate(cell, l_hidden[i], h)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1])
    ap.add_argument("--sources", nargs="+", default=["noise", "related"])
    args = ap.parse_args()
    cfg = benchmarks.ablation_run_config()
    for source in args.sources:
        for seed in args.seeds:
            pair = TaskSequence.from_datasets(list(benchmarks.ablation_pair(seed, source)))
            state = M.new_state(benchmarks.ablation_body(), cfg.np_dtype, "cell")
            M.begin_task(state, pair[0].n_classes, seed)
            train_short_phase(state, pair[0], benchmarks.ablation_source_config(source) or cfg.short, seed,
                              track_eval=False)
            M.promote_first_task(state)
            M.begin_task(state, pair[1].n_classes, seed)
            x = Tensor(pair[1].x_train.astype(state.dtype))
            before = gate_stats(state, x)
            train_short_phase(state, pair[1], cfg.short, seed, track_eval=False)
            after = gate_stats(state, x)
            for layer, (b, a) in enumerate(zip(before, after)):
                print(f"{source:8s} seed {seed} layer {layer}: pre-activation median {b[0]:7.1f} -> {a[0]:7.1f}, "
                      f"max sigmoid slope {b[1]:.1e} -> {a[1]:.1e}")


if __name__ == "__main__":
    main()
