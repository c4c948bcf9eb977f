"""Leakage of the bundled table1 receiver: continuous, per basis, binned and compensated."""

import argparse

from timeleak import average_leakage, best_grouping, table1_receiver
from timeleak.formats import leakage_report_to_dict, render


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--bin-widths", type=float, nargs="*", default=[150.0, 500.0, 1000.0])
    ap.add_argument("--phases", type=int, default=16)
    args = ap.parse_args()

    rcv = table1_receiver()
    rep = average_leakage(rcv, args.bin_widths, args.phases, compensate=True)
    print(render(leakage_report_to_dict(rep)), end="")
    best, mi = best_grouping(rcv.detectors)
    pairs = " / ".join(f"{b}: {d0},{d1}" for b, (d0, d1) in best.grouping().items())
    print(f"most leaky grouping: {pairs} at {mi:.6f} bits")


if __name__ == "__main__":
    main()
