"""Index and whole-iteration cost versus width m, written as two CSVs.

    python scripts/run_scaling.py --out-dir results/scaling
"""

import argparse
from pathlib import Path

from sparse_advtrain.bench import BENCH_COLUMNS, ITER_COLUMNS, bench_hsr, bench_iteration, loglog_slope
from sparse_advtrain.cli import csv_text


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--d", type=int, default=6)
    p.add_argument("--log2-m", type=int, nargs=2, default=(12, 17), metavar=("LO", "HI"))
    p.add_argument("--active-frac", type=float, default=0.01)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--T", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="results/scaling")
    args = p.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ms = [2**k for k in range(args.log2_m[0], args.log2_m[1] + 1)]

    query_rows = bench_hsr(args.d, ms, args.active_frac, trials=64, seed=args.seed)
    (out / "bench_hsr.csv").write_text(csv_text(BENCH_COLUMNS, [r.values() for r in query_rows]))
    iter_rows = bench_iteration(args.d, ms, n=args.n, active_frac=args.active_frac, T=args.T, seed=args.seed)
    (out / "bench_iteration.csv").write_text(csv_text(ITER_COLUMNS, [r.values() for r in iter_rows]))

    print(f"query visits slope      {loglog_slope(ms, [r.mean_visits for r in query_rows]):.3f}")
    print(f"iteration visits slope  {loglog_slope(ms, [r.mean_visits for r in iter_rows]):.3f}")
    for r in iter_rows:
        hsr_ns, dense_ns = r.extra[0], r.extra[1]
        print(f"m={r.m:>7d}  hsr {hsr_ns / 1e6:8.2f} ms  dense {dense_ns / 1e6:8.2f} ms  speedup {dense_ns / hsr_ns:5.2f}x")


if __name__ == "__main__":
    main()
