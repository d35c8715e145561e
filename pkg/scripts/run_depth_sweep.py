#!/usr/bin/env python3
"""Depth-scaling study driver: dyn vs static activations over the full grid.

Writes depth_sweep.csv plus per-run telemetry under --out. Uses MNIST when
available, otherwise the synthetic digit task.
"""

import argparse

from dynact.data import locate_mnist
from dynact.experiments import exp_depth_sweep, merge_config


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/depth_sweep")
    ap.add_argument("--depths", type=int, nargs="+",
                    default=[1, 5, 10, 15, 20, 25, 30, 40, 50, 60, 75])
    ap.add_argument("--activations", nargs="+",
                    default=["dyn_mish", "mish", "relu", "swish"])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=3)
    ap.add_argument("--subset", type=int, default=5000)
    ap.add_argument("--lr", type=float, default=0.01)
    args = ap.parse_args()

    data = ({"kind": "mnist", "subset_n": args.subset}
            if locate_mnist() else
            {"kind": "synth_digits", "n_train": args.subset, "n_test": 2000})
    cfg = merge_config({
        "experiment": "depth-sweep",
        "output_dir": args.out,
        "seeds": args.seeds,
        "epochs": args.epochs,
        "depths": args.depths,
        "activations": args.activations,
        "data": data,
        "optimizer": {"lr": args.lr},
    })
    result = exp_depth_sweep(cfg)
    for row in result["summary"]:
        print(f"{row['activation']:10s} depth {row['depth']:3d}: "
              f"{row['mean_acc']:.4f} +- {row['std_acc']:.4f}")


if __name__ == "__main__":
    main()
