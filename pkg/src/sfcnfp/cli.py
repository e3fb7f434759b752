"""Command-line front end. All tabular output is CSV with a header row.

Exit codes: 0 success, 1 usage error, 2 unreadable or malformed input,
3 infeasible ordering or unstable queueing model.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import queueing
from .dependency import build_stage_plan, parse_chain, reorder_chain, rules_by_kind, serial_plan
from .errors import DuplicateRuleError, FixtureCorrupted, InfeasibleError, ParseError, UnstableError
from .fixture import compute_gains, load_fixture, write_gains
from .policy import DEFAULT_TENANTS, aggregate_rules, compile_to_flow_table, parse_policy, write_flow_table
from .simulator import compare_modes, parse_scenario, sweep, write_report, write_sweep

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_MODEL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _read(path):
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from None


def _table(path, tenants):
    ps = parse_policy(_read(path), tenants)
    return compile_to_flow_table(ps)


def _tenants(arg):
    return tuple(t for t in arg.split(",") if t) if arg else DEFAULT_TENANTS


def cmd_compile(args, out):
    table = _table(args.policy, _tenants(args.tenants))
    if args.aggregate:
        table = aggregate_rules(table)
    out.write(write_flow_table(table))


def _chain_and_rules(args):
    chain = parse_chain(_read(args.chain))
    rules = None
    if getattr(args, "policy", None):
        rules = rules_by_kind(chain, _table(args.policy, _tenants(args.tenants)))
    return chain, rules


def cmd_plan(args, out):
    chain, rules = _chain_and_rules(args)
    if args.reorder:
        chain = reorder_chain(chain, rules)
    plan = build_stage_plan(chain, rules, args.epsilon)
    out.write(plan.to_json() + "\n")


def cmd_queue(args, out):
    p = queueing.MmcParams(args.lam, args.mu, args.c)
    out.write(queueing.write_metrics([(p, queueing.metrics(p))]))


def cmd_estimate(args, out):
    chain, rules = _chain_and_rules(args)
    stations = {v.id: (v.mu, v.c, v.drop_probability) for v in chain}
    if args.plan:
        plan = build_stage_plan(chain, rules, args.epsilon)
        est = queueing.chain_latency(plan.stages, args.lam, stations, args.epsilon, mode="Staged")
    else:
        est = queueing.chain_latency(serial_plan(chain).stages, args.lam, stations, mode="Serial")
    out.write(queueing.write_estimate(est))


def _scenario(path):
    return parse_scenario(_read(path), Path(path).parent)


def cmd_simulate(args, out, err):
    sc = _scenario(args.scenario)
    reps = args.reps if args.reps is not None else sc.replications
    rep = compare_modes(sc.chain, sc.config, reps)
    for run in rep.serial_runs + rep.nfp_runs:
        for vid in run.saturated:
            err.write(f"warning: station {vid} saturated (observed utilization {run.utilization[vid]:.3f})\n")
    if rep.theoretical is None:
        err.write("warning: at least one station is unstable; analytic latency is infinite\n")
    out.write(write_report(rep, sc.config.lam))


def cmd_report(args, out, err):
    if not args.fixture:
        raise UsageError("report: only --fixture is supported")
    gains = compute_gains(load_fixture())
    out.write(write_gains(gains))
    best = max(gains, key=lambda g: g.gain_serial_over_nfp)
    err.write(f"max serial/NFP gain {best.gain_serial_over_nfp:.3f} at cores={best.cores} size={best.network_size}\n")


def cmd_sweep(args, out):
    sc = _scenario(args.scenario)
    try:
        sizes = [int(s) for s in args.sizes.split(",") if s]
    except ValueError:
        raise UsageError(f"sweep: bad --sizes {args.sizes!r}") from None
    if args.reps is not None:
        sc.replications = args.reps
    try:
        rows = sweep(sc, sizes, args.base_rate)
    except ValueError as exc:
        raise UsageError(f"sweep: {exc}") from None
    out.write(write_sweep(rows))


def build_parser():
    ap = _Parser(prog="sfcnfp", description="Service function chain parallelization toolkit")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("compile", help="compile a policy file to a flow table")
    p.add_argument("policy")
    p.add_argument("--aggregate", action="store_true")
    p.add_argument("--tenants", help="comma-separated tenant prefixes (defines EXT)")

    for name, helptext in (("plan", "partition a chain into parallel stages"),
                           ("estimate", "analytic chain latency")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("chain")
        p.add_argument("--policy", help="policy file whose rules attach to chain members by kind")
        p.add_argument("--tenants")
        p.add_argument("--epsilon", type=float, default=0.0, help="merge overhead per stage (s)")
        if name == "plan":
            p.add_argument("--reorder", action="store_true")
        else:
            p.add_argument("--lambda", dest="lam", type=float, required=True)
            p.add_argument("--plan", action="store_true", help="staged estimate instead of serial")

    p = sub.add_parser("queue", help="M/M/c metrics for one station")
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--c", type=int, required=True)

    p = sub.add_parser("simulate", help="serial vs theoretical vs NFP comparison")
    p.add_argument("scenario")
    p.add_argument("--reps", type=int)

    p = sub.add_parser("report", help="gains from the published latency figures")
    p.add_argument("--fixture", action="store_true")

    p = sub.add_parser("sweep", help="comparison over network sizes")
    p.add_argument("scenario")
    p.add_argument("--sizes", required=True)
    p.add_argument("--base-rate", type=float)
    p.add_argument("--reps", type=int)
    return ap


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    ap = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        if not argv:
            raise UsageError(ap.format_usage().strip())
        args = ap.parse_args(argv)
        if args.command is None:
            raise UsageError(ap.format_usage().strip())
        if args.command in ("simulate", "report"):
            globals()[f"cmd_{args.command}"](args, out, err)
        else:
            globals()[f"cmd_{args.command}"](args, out)
    except UsageError as exc:
        err.write(ap.format_help() if not argv else f"{exc}\n")
        return EXIT_USAGE
    except (ParseError, DuplicateRuleError, FixtureCorrupted) as exc:
        err.write(f"error: {exc}\n")
        return EXIT_INPUT
    except (UnstableError, InfeasibleError) as exc:
        err.write(f"error: {exc}\n")
        return EXIT_MODEL
    except ValueError as exc:
        err.write(f"error: {exc}\n")
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
