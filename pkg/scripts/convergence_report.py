#!/usr/bin/env python3
"""Walk iterations to convergence versus grid size.

For each N, draws random post-ReLU feature maps, runs the walk without an
iteration cap and reports the iteration count next to |lambda_2| of the
transfer matrix. Power iteration shrinks the error by roughly |lambda_2| per
step, so ``log(tol) / log(|lambda_2|)`` is a rough upper estimate of the count.
"""

import argparse
import math
import statistics

import numpy as np

from spn.sp_core import SpConfig, build_transfer_matrix, random_walk


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="4,6,8,10,14")
    ap.add_argument("--k", type=int, default=64)
    ap.add_argument("--samples", type=int, default=30)
    ap.add_argument("--tol", type=float, default=1e-10)
    ap.add_argument("--epsilon-factor", type=float, default=0.15)
    args = ap.parse_args()

    cfg = SpConfig(epsilon_factor=args.epsilon_factor, max_iters=100_000,
                   convergence_tol=args.tol)
    print(f"{'N':>3} {'median iters':>12} {'min':>5} {'max':>5} {'|lambda_2|':>11} {'predicted':>9}")
    for n in (int(s) for s in args.sizes.split(",")):
        iters, lams = [], []
        for seed in range(args.samples):
            U = np.maximum(np.random.default_rng(seed).standard_normal((args.k, n, n)), 0)
            D = build_transfer_matrix(U, cfg)
            iters.append(random_walk(D, cfg).iterations)
            lams.append(np.sort(np.abs(np.linalg.eigvals(D.entries)))[-2])
        lam = statistics.median(lams)
        pred = math.log(args.tol) / math.log(lam) if lam < 1 else float("inf")
        print(f"{n:>3} {statistics.median(iters):>12} {min(iters):>5} {max(iters):>5} "
              f"{lam:>11.4f} {pred:>9.0f}")


if __name__ == "__main__":
    main()
