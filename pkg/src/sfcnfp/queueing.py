"""Steady-state M/M/c metrics and whole-chain latency estimates.

Utilization is per server, ``rho = lam / (c * mu)``. All probabilities are built
from the running terms ``(c rho)^n / n!`` carried in log space, so factorials are
never formed and large server counts do not overflow.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

from .errors import ConsistencyError, UnstableError

FORM_TOL = 1e-12


@dataclass(frozen=True)
class MmcParams:
    lam: float
    mu: float
    c: int = 1

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("arrival rate must be > 0")
        if not self.mu > 0:
            raise ValueError("service rate must be > 0")
        if int(self.c) != self.c or self.c < 1:
            raise ValueError("server count must be an integer >= 1")

    @property
    def offered_load(self):
        return self.lam / self.mu


@dataclass(frozen=True)
class MmcMetrics:
    rho: float
    p0: float
    delay_probability: float
    mean_queue_len: float
    mean_wait: float


def utilization(p: MmcParams) -> float:
    rho = p.lam / (p.c * p.mu)
    if rho >= 1:
        raise UnstableError(f"unstable queue: utilization {rho:.6g} >= 1 (lambda={p.lam}, mu={p.mu}, c={p.c})")
    return rho


def _logsumexp(xs):
    m = max(xs)
    return m + math.log(math.fsum(math.exp(x - m) for x in xs))


@lru_cache(maxsize=4096)
def _log_terms(p: MmcParams):
    """Log of (c rho)^n / n! for n = 0..c via the ratio recurrence."""
    log_a = math.log(p.offered_load)
    out = [0.0]
    for n in range(1, p.c + 1):
        out.append(out[-1] + log_a - math.log(n))
    return out


@lru_cache(maxsize=4096)
def _solve(p: MmcParams):
    rho = utilization(p)
    lt = _log_terms(p)
    head, tail = lt[:-1], lt[-1]
    log_tail = tail - math.log1p(-rho)
    log_p0 = -_logsumexp(head + [log_tail])
    # Erlang C, scaled by the largest head term to stay finite
    m = max(head + [tail])
    s = math.fsum(math.exp(x - m) for x in head)
    t = math.exp(tail - m)
    pi_w = t / ((1 - rho) * s + t)
    return rho, log_p0, pi_w


def p0(p: MmcParams) -> float:
    return math.exp(_solve(p)[1])


def log_p_n(p: MmcParams, n: int) -> float:
    if n < 0:
        raise ValueError("n must be >= 0")
    rho, log_p0, _ = _solve(p)
    lt = _log_terms(p)
    if n <= p.c:
        return log_p0 + lt[n]
    return log_p0 + lt[p.c] + (n - p.c) * math.log(rho)


def p_n(p: MmcParams, n: int) -> float:
    return math.exp(log_p_n(p, n))


def distribution(p: MmcParams, n_max: int) -> list[float]:
    return [p_n(p, n) for n in range(n_max + 1)]


def delay_probability(p: MmcParams) -> float:
    return _solve(p)[2]


def mean_queue_length(p: MmcParams) -> float:
    rho, _, pi_w = _solve(p)
    return pi_w * rho / (1 - rho)


def mean_wait_geometric(p: MmcParams) -> float:
    rho, _, pi_w = _solve(p)
    return pi_w / (1 - rho) / (p.c * p.mu)


def mean_wait_departures(p: MmcParams) -> float:
    _, _, pi_w = _solve(p)
    return pi_w / (p.c * p.mu) + mean_queue_length(p) / (p.c * p.mu)


def mean_wait(p: MmcParams) -> float:
    """Mean time in queue. Computed two ways (geometric tail, and residual
    service plus queued work); they must agree."""
    w_geo = mean_wait_geometric(p)
    w_dep = mean_wait_departures(p)
    if abs(w_geo - w_dep) > FORM_TOL * max(abs(w_geo), abs(w_dep)):
        raise ConsistencyError(f"mean wait forms disagree: {w_geo!r} vs {w_dep!r}")
    return w_geo


def metrics(p: MmcParams) -> MmcMetrics:
    return MmcMetrics(utilization(p), p0(p), delay_probability(p), mean_queue_length(p), mean_wait(p))


def station_latency(p: MmcParams) -> float:
    """Queue wait plus one service."""
    return mean_wait(p) + 1.0 / p.mu


# -- chains -----------------------------------------------------------------

@dataclass
class ChainEstimate:
    per_stage: list = field(default_factory=list)  # (label, latency seconds)
    total: float = 0.0
    mode: str = "Serial"


def chain_latency(
    stages: Sequence[Sequence[str]],
    lam: float,
    stations: Mapping[str, tuple],
    merge_overhead: float = 0.0,
    mode: str = "Staged",
    thinning: bool = False,
) -> ChainEstimate:
    """Latency of a chain given as ordered stages of station ids.

    ``stations`` maps id -> (mu, c) or (mu, c, drop_probability). In ``Serial``
    mode every stage must be a singleton and no merge overhead is added. Every
    station sees the full arrival rate unless ``thinning`` is on, in which case
    each stage passes on only the traffic its members did not drop.
    """
    if mode not in ("Serial", "Staged"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "Serial" and any(len(s) != 1 for s in stages):
        raise ValueError("serial estimates need one station per stage")
    est = ChainEstimate(mode=mode)
    offered = lam
    for stage in stages:
        lats = []
        keep = 1.0
        for sid in stage:
            mu, c, *rest = stations[sid]
            try:
                lats.append(station_latency(MmcParams(offered, mu, c)))
            except UnstableError as exc:
                raise UnstableError(f"station {sid}: {exc}") from None
            if rest:
                keep *= 1.0 - rest[0]
        latency = max(lats) + (merge_overhead if mode == "Staged" else 0.0)
        est.per_stage.append(("|".join(stage), latency))
        if thinning:
            offered *= keep
            if offered <= 0:
                break
    est.total = math.fsum(x for _, x in est.per_stage)
    return est


# -- CSV --------------------------------------------------------------------

METRICS_COLUMNS = ["lambda", "mu", "c", "rho", "p0", "pi_w", "e_lq", "e_w"]
ESTIMATE_COLUMNS = ["stage", "members", "latency"]


def write_metrics(rows: Sequence[tuple[MmcParams, MmcMetrics]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_COLUMNS)
    for p, m in rows:
        w.writerow([repr(p.lam), repr(p.mu), p.c, repr(m.rho), repr(m.p0),
                    repr(m.delay_probability), repr(m.mean_queue_len), repr(m.mean_wait)])
    return buf.getvalue()


def write_estimate(est: ChainEstimate) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ESTIMATE_COLUMNS)
    for i, (label, lat) in enumerate(est.per_stage, start=1):
        w.writerow([i, label, repr(lat)])
    w.writerow(["TOTAL", est.mode, repr(est.total)])
    return buf.getvalue()
