"""Monte-Carlo sweep of spike emergence in the symmetrised spiked model.

Prints, for each psi, the fraction of seeds whose standardised spectrum
(scaled by 1/sqrt(D)) has at least one eigenvalue outside [-2, 2].
"""
import argparse

import numpy as np

from spqr.spectral import SpikedModelParams, count_spikes, sample_spiked_wishart, scaled_spectrum


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--dim", type=int, default=256)
    ap.add_argument("--seeds", type=int, default=50)
    ap.add_argument("--psi", type=float, nargs="*",
                    default=[0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 8.0])
    args = ap.parse_args()
    print("psi,spike_rate,mean_top_eig")
    for psi in args.psi:
        params = SpikedModelParams(psi=psi, n=args.dim)
        hits, tops = 0, []
        for seed in range(args.seeds):
            lam = scaled_spectrum(sample_spiked_wishart(params, seed=10_000 + seed))
            hits += count_spikes(lam) >= 1
            tops.append(np.abs(lam.eigenvalues).max())
        print(f"{psi},{hits / args.seeds:.3f},{np.mean(tops):.4f}")


if __name__ == "__main__":
    main()
