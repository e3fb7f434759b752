"""Serial, analytic and parallel latency of a chain as offered load grows.

Load is network_size * base_rate, mirroring the x axis of the published
latency figure.
"""

import argparse
import sys
from pathlib import Path

from sfcnfp.simulator import parse_scenario, sweep, write_sweep

DEFAULT = Path(__file__).resolve().parent.parent / "data" / "nat_fw_ids.scenario"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("scenario", nargs="?", default=str(DEFAULT))
    ap.add_argument("--sizes", default="50,100,150,200,250")
    ap.add_argument("--base-rate", type=float)
    ap.add_argument("--reps", type=int)
    ap.add_argument("-o", "--output")
    args = ap.parse_args()

    path = Path(args.scenario)
    sc = parse_scenario(path.read_text(), path.parent)
    if args.reps:
        sc.replications = args.reps
    rows = sweep(sc, [int(s) for s in args.sizes.split(",")], args.base_rate)
    text = write_sweep(rows)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)


if __name__ == "__main__":
    main()
