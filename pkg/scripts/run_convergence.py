"""Robust-loss curves of adversarial training for several target accuracies.

The learning rate follows eps * m^{-1/5}, so eps sets the step. Each run writes
its metrics CSV and the script prints how far the loss fell.

    python scripts/run_convergence.py --eps 0.1 0.01 --seeds 0 1 2
"""

import argparse
from pathlib import Path

import numpy as np

from sparse_advtrain.adversary import AdversaryConfig
from sparse_advtrain.data import generate_dataset
from sparse_advtrain.trainer import TrainConfig, stream, train, write_metrics_csv


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--eps", type=float, nargs="+", default=[0.1, 0.01])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--m", type=int, default=4096)
    p.add_argument("--T", type=int, default=200)
    p.add_argument("--out-dir", default="results/convergence")
    args = p.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    print("eps      seed  first     last10    ratio")
    for eps in args.eps:
        for seed in args.seeds:
            ds = generate_dataset(8, 8, 0.5, 0.05, "smooth", seed=stream(seed, "data"))
            cfg = TrainConfig(m=args.m, d=8, n=8, rho=0.05, eps=eps, seed=seed, T=args.T,
                              adversary=AdversaryConfig("pgd", 0.05, 5))
            metrics = train(cfg, ds).metrics
            write_metrics_csv(metrics, out / f"metrics_eps{eps:g}_seed{seed}.csv")
            first = metrics[0].robust_loss
            last = float(np.mean([r.robust_loss for r in metrics[-10:]]))
            print(f"{eps:<8g} {seed:<5d} {first:.5f}  {last:.5f}  {last / first:.3f}")


if __name__ == "__main__":
    main()
