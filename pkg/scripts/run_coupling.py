"""Gap between the network and its linearization around init, as m grows.

Every column of W moves by K * m^{-3/5}; the script prints the median over seeds
of the largest gap over sampled inputs.

    python scripts/run_coupling.py --log2-m 8 10 12 14
"""

import argparse

import numpy as np

from sparse_advtrain.checks import coupling_gap


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--log2-m", type=int, nargs="+", default=[10, 12, 14])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--K", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=256)
    args = p.parse_args()

    print("m        median_gap  min       max")
    for k in args.log2_m:
        m = 2**k
        gaps = [coupling_gap(m, s, args.K, samples=args.samples) for s in range(args.seeds)]
        print(f"{m:<8d} {np.median(gaps):.5f}     {min(gaps):.5f}   {max(gaps):.5f}")


if __name__ == "__main__":
    main()
