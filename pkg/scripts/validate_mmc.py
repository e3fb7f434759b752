"""Simulated vs analytic M/M/c waiting time over a utilization grid."""

import argparse
import csv
import sys

from sfcnfp.dependency import VnfInstance
from sfcnfp.queueing import MmcParams, mean_wait
from sfcnfp.simulator import SimConfig, run_serial, validate_littles_law


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--mu", type=float, default=1.0)
    ap.add_argument("--servers", default="1,2,4,8")
    ap.add_argument("--rho", default="0.3,0.5,0.7,0.9")
    ap.add_argument("--packets", type=int, default=200_000)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["c", "rho", "lambda", "analytic_wait", "simulated_wait", "rel_error", "littles_residual"])
    for c in (int(x) for x in args.servers.split(",")):
        for rho in (float(x) for x in args.rho.split(",")):
            lam = rho * c * args.mu
            exact = mean_wait(MmcParams(lam, args.mu, c))
            st = run_serial([VnfInstance("s", "probe", args.mu, c)],
                            SimConfig(seed=args.seed, lam=lam, horizon=args.packets, warmup=args.packets // 20))
            err = abs(st.mean_wait - exact) / exact if exact > 0 else float("nan")
            w.writerow([c, rho, f"{lam:.6g}", f"{exact:.6g}", f"{st.mean_wait:.6g}", f"{err:.4f}",
                        f"{validate_littles_law(st, lam):.4f}"])


if __name__ == "__main__":
    main()
