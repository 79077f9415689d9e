"""Predicted-Q conservatism against ensemble size under the min rule (beta=0, offline)."""
import argparse

import numpy as np

from spqr.experiments import SEEDS, offline_run


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", type=int, nargs="*", default=[2, 5, 10])
    args = ap.parse_args()
    print("n_ensemble,median_q_mean,median_q_std")
    for n in args.sizes:
        runs = [offline_run(0.0, s, n_ensemble=n) for s in SEEDS]
        print(f"{n},{np.median([r.final.q_mean for r in runs]):.4f},"
              f"{np.median([r.final.q_std for r in runs]):.4f}", flush=True)


if __name__ == "__main__":
    main()
