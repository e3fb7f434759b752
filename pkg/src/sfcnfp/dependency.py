"""Read/write hazards between network functions, stage planning and chain reordering."""

from __future__ import annotations

import enum
import heapq
import json
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import InfeasibleError, ParseError
from .policy import FORWARD_CLASS, FlowRule, Overlap, RuleAction, match_overlap

NONE, R, W, RW = "-", "R", "W", "RW"


@dataclass(frozen=True)
class AccessProfile:
    header: str = NONE
    payload: str = NONE
    can_drop: bool = False
    encrypts_payload: bool = False

    def __post_init__(self):
        if self.header not in (NONE, R, RW):
            raise ValueError(f"header access must be -, R or RW, got {self.header!r}")
        if self.payload not in (NONE, R, W, RW):
            raise ValueError(f"payload access must be -, R, W or RW, got {self.payload!r}")
        if self.encrypts_payload and self.payload not in (W, RW):
            raise ValueError("an encrypting function must write the payload")

    @property
    def reads_payload(self):
        return self.payload in (R, RW)


PROFILES = {
    "probe": AccessProfile(header=R),
    "nat": AccessProfile(header=RW),
    "firewall": AccessProfile(header=RW, can_drop=True),
    "proxy": AccessProfile(header=R, payload=R),
    "ids": AccessProfile(header=R, payload=R),
    "ips": AccessProfile(header=RW, payload=R, can_drop=True),
    "lb": AccessProfile(header=RW, payload=R),
    # not part of the read/write table; encrypting the payload makes it a writer
    "vpn": AccessProfile(header=RW, payload=W, encrypts_payload=True),
}
KINDS = tuple(PROFILES)


@dataclass(frozen=True)
class VnfInstance:
    id: str
    kind: str
    mu: float = 1.0
    c: int = 1
    profile: AccessProfile = None
    drop_probability: float = 0.0

    def __post_init__(self):
        if self.kind not in PROFILES:
            raise ValueError(f"unknown VNF kind {self.kind!r}")
        if self.profile is None:
            object.__setattr__(self, "profile", PROFILES[self.kind])
        if not self.mu > 0:
            raise ValueError(f"{self.id}: service rate must be > 0")
        if int(self.c) != self.c or self.c < 1:
            raise ValueError(f"{self.id}: server count must be an integer >= 1")
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ValueError(f"{self.id}: drop probability outside [0, 1]")


class HazardKind(enum.Enum):
    RAR = "RAR"
    WAR = "WAR"
    RAW = "RAW"
    WAW = "WAW"
    NONE = "NONE"


@dataclass(frozen=True)
class Hazard:
    region: str  # "header" | "payload"
    kind: HazardKind


def _hazard(a, b):
    if a == NONE or b == NONE:
        return HazardKind.NONE
    a_writes, b_writes = a != R, b != R
    if a_writes and b_writes:
        return HazardKind.WAW
    if a_writes:
        return HazardKind.RAW
    if b_writes:
        return HazardKind.WAR
    return HazardKind.RAR


def classify_pair(first: VnfInstance, second: VnfInstance) -> list[Hazard]:
    f, s = first.profile, second.profile
    return [
        Hazard("header", _hazard(f.header, s.header)),
        Hazard("payload", _hazard(f.payload, s.payload)),
    ]


ALLOWED = {HazardKind.RAR, HazardKind.WAR, HazardKind.NONE}


def hazard_free(first: VnfInstance, second: VnfInstance) -> bool:
    return all(h.kind in ALLOWED for h in classify_pair(first, second))


def drop_conflict(first, second, rules=None) -> bool:
    """A drop in ``first`` races a forward in ``second`` on overlapping traffic.

    Only decidable with compiled rules; without them no conflict is assumed.
    """
    if not first.profile.can_drop or not rules:
        return False
    drops = [r for r in rules.get(first.id, ()) if r.drops]
    fwds = [r for r in rules.get(second.id, ()) if r.forwards]
    return any(match_overlap(d.match, f.match) is not Overlap.DISJOINT for d in drops for f in fwds)


def parallelizable(first: VnfInstance, second: VnfInstance, rules: Mapping[str, Sequence[FlowRule]] | None = None) -> bool:
    """Order-sensitive: ``first`` is upstream of ``second`` in the chain."""
    return hazard_free(first, second) and not drop_conflict(first, second, rules)


def co_stageable(a: VnfInstance, b: VnfInstance, rules=None) -> bool:
    """Whether ``a`` and ``b`` may share a parallel stage.

    Every branch of a stage sees the original packet, so the stage behaves like
    the serial order in which readers run before writers. The pair is admitted
    when either orientation is hazard-free and neither side's drops race the
    other's forwards.
    """
    if drop_conflict(a, b, rules) or drop_conflict(b, a, rules):
        return False
    return hazard_free(a, b) or hazard_free(b, a)


class NfpDecision(enum.Enum):
    PARALLEL = "Parallel"
    SERIAL = "Serial"


def nfp_action_rule(a_j: RuleAction, a_k: RuleAction) -> NfpDecision:
    if isinstance(a_j, FORWARD_CLASS):
        return NfpDecision.PARALLEL
    return NfpDecision.SERIAL


@dataclass
class StagePlan:
    stages: list  # list of lists of VNF ids
    merge_overhead: float = 0.0

    def __post_init__(self):
        if self.merge_overhead < 0:
            raise ValueError("merge overhead must be >= 0")
        seen = set()
        for stage in self.stages:
            if not stage:
                raise ValueError("empty stage")
            for vid in stage:
                if vid in seen:
                    raise ValueError(f"{vid} appears in more than one stage")
                seen.add(vid)

    def __len__(self):
        return len(self.stages)

    def order(self):
        return [v for stage in self.stages for v in stage]

    def stage_of(self, vid):
        for i, stage in enumerate(self.stages):
            if vid in stage:
                return i
        raise KeyError(vid)

    def to_json(self) -> str:
        return json.dumps(self.stages)

    @classmethod
    def from_json(cls, text: str, merge_overhead: float = 0.0) -> "StagePlan":
        data = json.loads(text)
        if not isinstance(data, list) or not all(
            isinstance(s, list) and all(isinstance(v, str) for v in s) for s in data
        ):
            raise ParseError("stage plan must be an array of arrays of ids")
        return cls(data, merge_overhead)


def build_stage_plan(chain: Sequence[VnfInstance], rules=None, merge_overhead: float = 0.0) -> StagePlan:
    """Greedy left-to-right packing: each function joins the last stage when it
    can share a stage with every member, otherwise it opens a new one."""
    if not chain:
        raise ValueError("cannot plan an empty chain")
    ids = [v.id for v in chain]
    if len(set(ids)) != len(ids):
        raise ValueError("VNF ids must be distinct")
    stages: list[list[VnfInstance]] = []
    for vnf in chain:
        if stages and all(co_stageable(m, vnf, rules) for m in stages[-1]):
            stages[-1].append(vnf)
        else:
            stages.append([vnf])
    return StagePlan([[v.id for v in s] for s in stages], merge_overhead)


def serial_plan(chain: Sequence[VnfInstance], merge_overhead: float = 0.0) -> StagePlan:
    return StagePlan([[v.id] for v in chain], merge_overhead)


def _monitor_contains(monitor_rules, drop_rules):
    for d in drop_rules:
        for m in monitor_rules:
            if match_overlap(m.match, d.match) in (Overlap.EQUAL, Overlap.A_CONTAINS_B):
                return True
    return False


def _has_cycle(n, edges):
    indeg = [0] * n
    adj = [[] for _ in range(n)]
    for a, b in edges:
        adj[a].append(b)
        indeg[b] += 1
    stack = [i for i in range(n) if indeg[i] == 0]
    seen = 0
    while stack:
        i = stack.pop()
        seen += 1
        for j in adj[i]:
            indeg[j] -= 1
            if indeg[j] == 0:
                stack.append(j)
    return seen != n


def reorder_chain(chain: Sequence[VnfInstance], rules: Mapping[str, Sequence[FlowRule]] | None = None) -> list[VnfInstance]:
    """Reorder so payload readers precede encryptors (hard constraint), then move
    drop-capable functions ahead of monitors whose mirrored traffic contains
    what they drop. Everything else keeps its relative order."""
    if not chain:
        raise ValueError("cannot reorder an empty chain")
    rules = rules or {}
    n = len(chain)
    hard = set()
    for i, a in enumerate(chain):
        for j, b in enumerate(chain):
            if i != j and a.profile.reads_payload and b.profile.encrypts_payload:
                hard.add((i, j))
    if _has_cycle(n, hard):
        names = sorted({chain[i].id for i, j in hard} & {chain[j].id for i, j in hard})
        raise InfeasibleError(f"payload readers and encryptors constrain each other: {', '.join(names)}")

    edges = set(hard)
    for i, d in enumerate(chain):
        if not d.profile.can_drop:
            continue
        drops = [r for r in rules.get(d.id, ()) if r.drops]
        for j, m in enumerate(chain):
            if i == j:
                continue
            monitors = [r for r in rules.get(m.id, ()) if r.mirrors]
            if drops and monitors and _monitor_contains(monitors, drops):
                if not _has_cycle(n, edges | {(i, j)}):
                    edges.add((i, j))

    indeg = [0] * n
    adj = [[] for _ in range(n)]
    for a, b in edges:
        adj[a].append(b)
        indeg[b] += 1
    ready = [i for i in range(n) if indeg[i] == 0]
    heapq.heapify(ready)
    out = []
    while ready:
        i = heapq.heappop(ready)
        out.append(chain[i])
        for j in adj[i]:
            indeg[j] -= 1
            if indeg[j] == 0:
                heapq.heappush(ready, j)
    return out


def rules_by_kind(chain: Sequence[VnfInstance], table: Sequence[FlowRule]) -> dict:
    """Attach compiled rules to chain members by matching the rule origin to the VNF kind."""
    out = {}
    for v in chain:
        out[v.id] = [r for r in table if v.kind in r.origin.split("+")]
    return out


# -- chain files -------------------------------------------------------

_KV = re.compile(r"^(\w+)=(\S+)$")


def parse_chain(text: str) -> list[VnfInstance]:
    """``id kind mu=<float> c=<int> [drop=<float>]`` per line, ``#`` comments."""
    chain = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        toks = body.split()
        if len(toks) < 2:
            raise ParseError("expected '<id> <kind> mu=<float> c=<int>'", lineno, 1, "kind")
        vid, kind = toks[0], toks[1].lower()
        if kind not in PROFILES:
            raise ParseError(f"unknown VNF kind {kind!r}", lineno, raw.find(toks[1]) + 1, "one of " + ", ".join(KINDS))
        opts = {}
        for tok in toks[2:]:
            m = _KV.match(tok)
            if not m or m.group(1) not in ("mu", "c", "drop"):
                raise ParseError(f"unexpected token {tok!r}", lineno, raw.find(tok) + 1, "mu=, c= or drop=")
            opts[m.group(1)] = m.group(2)
        if "mu" not in opts or "c" not in opts:
            raise ParseError(f"{vid}: mu= and c= are required", lineno)
        try:
            vnf = VnfInstance(vid, kind, float(opts["mu"]), int(opts["c"]), drop_probability=float(opts.get("drop", 0.0)))
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        if any(v.id == vid for v in chain):
            raise ParseError(f"duplicate VNF id {vid!r}", lineno, 1)
        chain.append(vnf)
    return chain


def format_chain(chain: Sequence[VnfInstance]) -> str:
    lines = []
    for v in chain:
        line = f"{v.id} {v.kind} mu={v.mu!r} c={v.c}"
        if v.drop_probability:
            line += f" drop={v.drop_probability!r}"
        lines.append(line + "\n")
    return "".join(lines)
