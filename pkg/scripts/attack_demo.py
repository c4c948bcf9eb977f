"""Simulate table1 sessions and run the MAP eavesdropper at several publication resolutions."""

import argparse

from timeleak.leakage import table1_receiver
from timeleak.simulation import attack_report, eve_map_attack_arrays, quantize, simulate_table


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--events", type=int, default=10 ** 6)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--resolutions", type=float, nargs="*", default=[150.0, 500.0, 1000.0, 2000.0])
    args = ap.parse_args()

    rcv = table1_receiver()
    table = simulate_table(rcv, args.events, args.seed)
    print("resolution_ps\tsuccess\tanalytic_success\tplugin_mi\tanalytic_mi")
    for r in [None, *args.resolutions]:
        stamps = quantize(table.timestamp, r)
        out = attack_report(table, eve_map_attack_arrays(table.basis, stamps, rcv, r), rcv, r)
        label = "exact" if r is None else f"{r:g}"
        print(f"{label}\t{out.empirical_success:.5f}\t{out.analytic_success:.5f}\t"
              f"{out.empirical_mi_bits:.5f}\t{out.analytic_mi_bits:.5f}")


if __name__ == "__main__":
    main()
