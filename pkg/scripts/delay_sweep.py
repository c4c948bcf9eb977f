"""MI against detector delay for two identically shaped detectors (plot-ready TSV)."""

import argparse

import numpy as np

from timeleak.formats import format_sweep_tsv
from timeleak.leakage import delay_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--tau-e", type=float, default=400.0)
    ap.add_argument("--tau-g", type=float, default=290.0)
    ap.add_argument("--stop", type=float, default=2000.0)
    ap.add_argument("--step", type=float, default=50.0)
    ap.add_argument("--bin-widths", type=float, nargs="*", default=[500.0, 1000.0])
    args = ap.parse_args()

    delays = np.arange(0.0, args.stop + args.step / 2, args.step)
    sweep = delay_sweep(args.tau_e, args.tau_g, delays, args.bin_widths)
    print(format_sweep_tsv(sweep), end="")


if __name__ == "__main__":
    main()
