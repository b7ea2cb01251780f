"""Solver SNR as a function of the number of masks for the exact NNLS scheme."""

import argparse

import numpy as np

from ghostproj import experiments as ex


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--side", type=int, default=20)
    ap.add_argument("--fractions", type=float, nargs="+", default=[0.25, 0.5, 1.0, 1.5, 2.0, 3.0])
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    nm = args.side**2
    print("N/nm,N,snr,n_nonzero,iterations")
    for frac in args.fractions:
        run, _, _ = ex.nnls_experiment(int(frac * nm), seed=args.seed, side=args.side)
        v = run.values
        snr = v["snr_solver"] if np.isfinite(v["snr_solver"]) else float("inf")
        print(f"{frac:g},{int(frac * nm)},{snr:.6g},{v['n_nonzero']},{v['iterations']}")


if __name__ == "__main__":
    main()
