"""Speedup table computed from the published latency measurements."""

import argparse
import statistics
import sys

from sfcnfp.fixture import compute_gains, load_fixture, write_gains


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-o", "--output", help="CSV path (default stdout)")
    args = ap.parse_args()

    gains = compute_gains(load_fixture())
    text = write_gains(gains)
    if args.output:
        with open(args.output, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)

    theo = [g.gain_theoretical_over_nfp for g in gains]
    serial = [g.gain_serial_over_nfp for g in gains]
    print(f"theoretical/NFP: mean {statistics.mean(theo):.3f}, min {min(theo):.3f}, max {max(theo):.3f}",
          file=sys.stderr)
    print(f"serial/NFP:      mean {statistics.mean(serial):.3f}, min {min(serial):.3f}, max {max(serial):.3f}",
          file=sys.stderr)


if __name__ == "__main__":
    main()
