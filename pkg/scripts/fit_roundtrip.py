"""Fit synthetic histograms drawn from each table1 detector and compare errors with the scatter."""

import argparse

import numpy as np

from timeleak.estimation import fit_response, histogram_from_samples
from timeleak.leakage import TABLE1_DETECTORS
from timeleak.timing_model import sample

PARAMS = ("t0", "tau_e", "tau_g")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--events", type=int, default=10 ** 6)
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--bin-width", type=float, default=20.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print("detector\tparam\ttruth\tmean_fit\treported_se\tempirical_sd")
    for det, truth in enumerate(TABLE1_DETECTORS, start=1):
        rng = np.random.default_rng([args.seed, det])
        fits = [fit_response(histogram_from_samples(sample(truth, rng, args.events), args.bin_width))
                for _ in range(args.trials)]
        for p in PARAMS:
            values = np.array([getattr(f.params, p) for f in fits])
            se = np.mean([f.std_errors[p] for f in fits])
            print(f"{det}\t{p}\t{getattr(truth, p):g}\t{values.mean():.2f}\t{se:.3f}\t{values.std(ddof=1):.3f}")


if __name__ == "__main__":
    main()
