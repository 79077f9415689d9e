"""Offline beta sweep on the desk grid world (min rule, N=10, seeds 0-3).

Writes one CSV row per run with the final RunMetrics, then prints per-beta
medians of the accept ratio, spike count, predicted Q and ensemble std.
"""
import argparse

import numpy as np

from spqr import io
from spqr.experiments import SEEDS, offline_run, run_row


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--betas", type=float, nargs="*", default=[0.0, 0.1, 1.0, 10.0])
    ap.add_argument("--n-ensemble", type=int, default=10)
    ap.add_argument("--out", default="out/beta_sweep.csv")
    args = ap.parse_args()
    rows = []
    for beta in args.betas:
        for seed in SEEDS:
            run = offline_run(beta, seed, args.n_ensemble)
            rows.append(run_row(run))
            print(f"beta {beta:g} seed {seed} q_mean {run.final.q_mean:.4f} "
                  f"accept {run.final.chi2_accept_ratio:.3f} ({run.seconds:.0f}s)", flush=True)
    header = list(rows[0])
    io.write_csv(args.out, header, [[r[k] for k in header] for r in rows])
    print("beta,accept,spikes,q_mean,q_std")
    for beta in args.betas:
        sub = [r for r in rows if r["beta"] == beta]
        med = {k: np.median([r[k] for r in sub]) for k in ("chi2_accept_ratio", "spike_count", "q_mean", "q_std")}
        print(f"{beta:g},{med['chi2_accept_ratio']:.4f},{med['spike_count']:g},{med['q_mean']:.4f},{med['q_std']:.4f}")


if __name__ == "__main__":
    main()
