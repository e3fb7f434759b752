"""Seeded simulation of packets through a chain of M/M/c stations.

Each station serves packets first-come first-served in order of (arrival time,
packet sequence number), so a station can be swept in one pass once its input
times are known. For feed-forward FCFS networks this produces exactly the
trajectory an event-list simulator would. In a parallel stage every member
receives the packet at the same instant and the stage releases it when the
slowest member is done, plus the merge overhead.
"""

from __future__ import annotations

import csv
import hashlib
import heapq
import io
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import queueing
from .dependency import StagePlan, VnfInstance, build_stage_plan, parse_chain
from .errors import ParseError, UnstableError

SATURATION = 0.99


@dataclass(frozen=True)
class SimConfig:
    seed: int = 1
    lam: float = 1.0
    horizon: int = 1_000_000  # packets
    warmup: int = 10_000
    merge_overhead: float = 0.0
    thinning: bool = False
    horizon_time: float | None = None  # seconds; overrides the packet horizon

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("arrival rate must be > 0")
        if self.warmup < 0:
            raise ValueError("warmup must be >= 0")
        if self.horizon_time is None and self.horizon < self.warmup:
            raise ValueError("horizon must not be shorter than warmup")
        if self.merge_overhead < 0:
            raise ValueError("merge overhead must be >= 0")


@dataclass
class LatencyStats:
    count: int
    mean: float
    p50: float
    p95: float
    p99: float
    mean_wait: float
    mean_in_system: float  # time-average number of packets in the chain
    mean_time_in_system: float  # includes dropped packets up to their drop
    arrivals: int
    delivered: int
    dropped: int
    utilization: dict = field(default_factory=dict)

    @property
    def saturated(self):
        return sorted(k for k, u in self.utilization.items() if u > SATURATION)


def stream(seed: int, *key: str) -> np.random.Generator:
    """Independent generator for one (station, purpose) key under a master seed."""
    digest = hashlib.blake2b("\x1f".join(key).encode(), digest_size=16).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    seed = int(seed) & (2**64 - 1)
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, seed >> 32, *words]))


def _arrival_times(cfg: SimConfig) -> np.ndarray:
    rng = stream(cfg.seed, "arrivals")
    if cfg.horizon_time is None:
        return np.cumsum(rng.standard_exponential(cfg.horizon)) / cfg.lam
    chunks, t = [], 0.0
    while t <= cfg.horizon_time:
        gaps = rng.standard_exponential(max(1024, int(cfg.lam * cfg.horizon_time * 0.25) + 1)) / cfg.lam
        chunk = t + np.cumsum(gaps)
        chunks.append(chunk)
        t = chunk[-1]
    times = np.concatenate(chunks)
    return times[times <= cfg.horizon_time]


def _sweep_station(t_in: np.ndarray, vnf: VnfInstance, seed: int):
    """FCFS multi-server pass. Returns (start, done, busy) indexed like ``t_in``;
    packets with infinite input time never arrive."""
    n = len(t_in)
    start = np.full(n, np.inf)
    done = np.full(n, np.inf)
    alive = np.flatnonzero(np.isfinite(t_in))
    order = alive[np.argsort(t_in[alive], kind="stable")]
    m = len(order)
    services = stream(seed, vnf.id, "service").standard_exponential(m) / vnf.mu
    arr = t_in[order].tolist()
    svc = services.tolist()
    st = [0.0] * m
    if vnf.c >= m:
        st = arr
    elif vnf.c == 1:
        free = 0.0
        for k in range(m):
            a = arr[k]
            s = a if a > free else free
            st[k] = s
            free = s + svc[k]
    else:
        heap = [0.0] * vnf.c
        replace = heapq.heapreplace
        for k in range(m):
            a = arr[k]
            f = heap[0]
            s = a if a > f else f
            st[k] = s
            replace(heap, s + svc[k])
    st = np.asarray(st, dtype=float)
    start[order] = st
    done[order] = st + services
    return start, done, float(services.sum())


def _run(stages: Sequence[Sequence[VnfInstance]], cfg: SimConfig, merge_overhead: float) -> LatencyStats:
    t_arr = _arrival_times(cfg)
    n = len(t_arr)
    t = t_arr.copy()
    wait = np.zeros(n)
    dropped_at = np.full(n, np.inf)
    busy, last = {}, {}
    for stage in stages:
        starts, dones = [], []
        drop_mask = np.zeros(n, dtype=bool)
        for vnf in stage:
            s, d, b = _sweep_station(t, vnf, cfg.seed)
            starts.append(s)
            dones.append(d)
            busy[vnf.id] = b
            fin = d[np.isfinite(d)]
            last[vnf.id] = float(fin.max()) if fin.size else 0.0
            if cfg.thinning and vnf.drop_probability > 0:
                served = np.flatnonzero(np.isfinite(d))
                served = served[np.argsort(s[served], kind="stable")]
                u = stream(cfg.seed, vnf.id, "drop").random(len(served))
                drop_mask[served[u < vnf.drop_probability]] = True
        alive = np.isfinite(t)
        if len(stage) == 1:
            join = dones[0]
            crit_start = starts[0]
        else:
            stacked = np.vstack(dones)
            crit = np.argmax(stacked, axis=0)
            join = stacked[crit, np.arange(n)]
            crit_start = np.vstack(starts)[crit, np.arange(n)]
        # dropped packets carry inf times; only live ones accumulate wait
        wait[alive] += crit_start[alive] - t[alive]
        join = join + merge_overhead
        if drop_mask.any():
            dropped_at[drop_mask] = join[drop_mask]
            join[drop_mask] = np.inf
        t = join

    exit_t = np.where(np.isfinite(t), t, dropped_at)
    horizon = n
    warm = min(cfg.warmup, horizon)
    measured = slice(warm, horizon)
    delivered_mask = np.isfinite(t[measured])
    soj = (t[measured] - t_arr[measured])[delivered_mask]
    w = wait[measured][delivered_mask]
    util = {}
    for vid, b in busy.items():
        c = next(v.c for s in stages for v in s if v.id == vid)
        util[vid] = b / (c * last[vid]) if last[vid] > 0 else 0.0

    nan = float("nan")
    if soj.size == 0:
        return LatencyStats(0, nan, nan, nan, nan, nan, nan, nan, n, int(np.isfinite(t).sum()),
                            int(np.isfinite(dropped_at).sum()), util)
    p50, p95, p99 = np.percentile(soj, [50, 95, 99])
    t0, t1 = t_arr[warm], t_arr[horizon - 1]
    if t1 > t0:
        overlap = np.clip(np.minimum(exit_t, t1) - np.maximum(t_arr, t0), 0.0, None)
        L = float(overlap.sum() / (t1 - t0))
    else:
        L = nan
    return LatencyStats(
        count=int(soj.size),
        mean=float(soj.mean()),
        p50=float(p50), p95=float(p95), p99=float(p99),
        mean_wait=float(w.mean()),
        mean_in_system=L,
        mean_time_in_system=float((exit_t[measured] - t_arr[measured]).mean()),
        arrivals=n,
        delivered=int(np.isfinite(t).sum()),
        dropped=int(np.isfinite(dropped_at).sum()),
        utilization=util,
    )


def run_serial(chain: Sequence[VnfInstance], cfg: SimConfig) -> LatencyStats:
    if not chain:
        raise ValueError("empty chain")
    return _run([[v] for v in chain], cfg, 0.0)


def run_nfp(plan: StagePlan, chain: Sequence[VnfInstance], cfg: SimConfig) -> LatencyStats:
    """Staged-parallel run; ``chain`` supplies the station parameters for the plan's ids.
    The merge overhead comes from ``cfg``."""
    by_id = {v.id: v for v in chain}
    missing = [vid for vid in plan.order() if vid not in by_id]
    if missing:
        raise ValueError(f"plan names unknown VNFs: {missing}")
    return _run([[by_id[v] for v in s] for s in plan.stages], cfg, cfg.merge_overhead)


def validate_littles_law(stats: LatencyStats, lam: float) -> float:
    if stats.count == 0:
        raise ValueError("no measured packets")
    lw = lam * stats.mean_time_in_system
    return abs(stats.mean_in_system - lw) / lw


# -- mode comparison --------------------------------------------------------

@dataclass
class ComparisonReport:
    plan: StagePlan
    seeds: list
    serial_runs: list
    nfp_runs: list
    serial: float
    nfp: float
    theoretical: queueing.ChainEstimate | None  # serial M/M/c chain
    theoretical_nfp: queueing.ChainEstimate | None  # same plan, analytic
    gain_serial_over_nfp: float
    gain_theoretical_over_nfp: float


def _stations(chain):
    return {v.id: (v.mu, v.c, v.drop_probability) for v in chain}


def compare_modes(chain: Sequence[VnfInstance], cfg: SimConfig, replications: int = 1,
                  plan: StagePlan | None = None, rules=None) -> ComparisonReport:
    if replications < 1:
        raise ValueError("replications must be >= 1")
    if plan is None:
        plan = build_stage_plan(chain, rules, cfg.merge_overhead)
    seeds = [cfg.seed + i for i in range(replications)]
    serial_runs, nfp_runs = [], []
    for s in seeds:
        c = _with(cfg, seed=s)
        serial_runs.append(run_serial(chain, c))
        nfp_runs.append(run_nfp(plan, chain, c))
    serial = float(np.mean([r.mean for r in serial_runs]))
    nfp = float(np.mean([r.mean for r in nfp_runs]))
    stations = _stations(chain)
    try:
        theo = queueing.chain_latency([[v.id] for v in chain], cfg.lam, stations, mode="Serial",
                                      thinning=cfg.thinning)
        theo_nfp = queueing.chain_latency(plan.stages, cfg.lam, stations, cfg.merge_overhead,
                                          mode="Staged", thinning=cfg.thinning)
    except UnstableError:
        theo = theo_nfp = None
    return ComparisonReport(
        plan, seeds, serial_runs, nfp_runs, serial, nfp, theo, theo_nfp,
        serial / nfp if nfp > 0 else math.nan,
        (theo.total / nfp) if theo is not None and nfp > 0 else math.nan,
    )


def _with(cfg: SimConfig, **changes) -> SimConfig:
    vals = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    vals.update(changes)
    return SimConfig(**vals)


# -- scenario files and CSV -------------------------------------------------

_SCENARIO_KEYS = {
    "seed": int, "lambda": float, "horizon": int, "warmup": int, "epsilon": float,
    "thinning": lambda s: s.lower() in ("1", "true", "yes", "on"),
    "horizon_time": float, "replications": int, "base_rate": float, "chain": str,
}
_CFG_NAMES = {"lambda": "lam", "epsilon": "merge_overhead"}


@dataclass
class Scenario:
    chain: list
    config: SimConfig
    replications: int = 1
    base_rate: float | None = None


def parse_scenario(text: str, base_dir: str | Path = ".", env: Mapping[str, str] | None = None) -> Scenario:
    """``key=value`` lines; ``chain=<path>`` is resolved against ``base_dir``.
    ``SFC_SEED`` in ``env`` overrides the seed."""
    env = os.environ if env is None else env
    vals = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, value = body.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or key not in _SCENARIO_KEYS:
            raise ParseError(f"unknown setting {body!r}", lineno, 1, ", ".join(_SCENARIO_KEYS))
        try:
            vals[key] = _SCENARIO_KEYS[key](value)
        except ValueError:
            raise ParseError(f"bad value for {key}: {value!r}", lineno, len(key) + 2) from None
    if "chain" not in vals:
        raise ParseError("scenario needs chain=<path>")
    if env.get("SFC_SEED"):
        try:
            vals["seed"] = int(env["SFC_SEED"])
        except ValueError:
            raise ParseError(f"SFC_SEED is not an integer: {env['SFC_SEED']!r}") from None
    path = Path(base_dir) / vals.pop("chain")
    try:
        chain = parse_chain(path.read_text())
    except OSError as exc:
        raise ParseError(f"cannot read chain file {path}: {exc.strerror}") from None
    reps = vals.pop("replications", 1)
    base_rate = vals.pop("base_rate", None)
    try:
        cfg = SimConfig(**{_CFG_NAMES.get(k, k): v for k, v in vals.items()})
    except ValueError as exc:
        raise ParseError(str(exc)) from None
    return Scenario(chain, cfg, reps, base_rate)


RESULT_COLUMNS = ["mode", "seed", "count", "mean", "p50", "p95", "p99", "littles_residual"]


def _fmt(x):
    return "" if x is None else repr(float(x))


def report_rows(rep: ComparisonReport, lam: float) -> list:
    rows = []
    for mode, runs in (("serial", rep.serial_runs), ("nfp", rep.nfp_runs)):
        for seed, st in zip(rep.seeds, runs):
            res = validate_littles_law(st, lam) if st.count else None
            rows.append([mode, seed, st.count, _fmt(st.mean), _fmt(st.p50), _fmt(st.p95), _fmt(st.p99), _fmt(res)])
    theo = rep.theoretical.total if rep.theoretical is not None else math.inf
    theo_nfp = rep.theoretical_nfp.total if rep.theoretical_nfp is not None else math.inf
    rows.append(["theoretical", "", 0, _fmt(theo), "", "", "", ""])
    rows.append(["theoretical_nfp", "", 0, _fmt(theo_nfp), "", "", "", ""])
    rows.append(["gain_serial_over_nfp", "", 0, _fmt(rep.gain_serial_over_nfp), "", "", "", ""])
    rows.append(["gain_theoretical_over_nfp", "", 0, _fmt(rep.gain_theoretical_over_nfp), "", "", "", ""])
    return rows


def write_report(rep: ComparisonReport, lam: float) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    w.writerows(report_rows(rep, lam))
    return buf.getvalue()


SWEEP_COLUMNS = ["size", "lambda", "serial", "theoretical", "nfp",
                 "gain_serial_over_nfp", "gain_theoretical_over_nfp"]


def sweep(scenario: Scenario, sizes: Sequence[int], base_rate: float | None = None) -> list:
    """One comparison per network size, offered load ``size * base_rate``."""
    rate = base_rate if base_rate is not None else scenario.base_rate
    if rate is None:
        raise ValueError("sweep needs a base_rate")
    out = []
    for size in sizes:
        cfg = _with(scenario.config, lam=size * rate)
        rep = compare_modes(scenario.chain, cfg, scenario.replications)
        theo = rep.theoretical.total if rep.theoretical is not None else math.inf
        out.append([size, repr(cfg.lam), repr(rep.serial), repr(theo), repr(rep.nfp),
                    repr(rep.gain_serial_over_nfp), repr(rep.gain_theoretical_over_nfp)])
    return out


def write_sweep(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    w.writerows(rows)
    return buf.getvalue()
