"""Online greedy return of the beta=0 baseline against an SPQR gain (desk grid world)."""
import argparse

import numpy as np

from spqr.experiments import SEEDS, desk_world, online_run
from spqr.worlds import optimal_return


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--beta", type=float, default=0.1)
    args = ap.parse_args()
    opt = optimal_return(desk_world())
    for beta in (0.0, args.beta):
        ret = np.array([online_run(beta, s).final.avg_return for s in SEEDS])
        print(f"beta {beta:g}: returns {np.round(ret, 4).tolist()} mean {ret.mean():.4f} "
              f"({ret.mean() / opt:.3f} of optimum {opt:.4f})", flush=True)


if __name__ == "__main__":
    main()
