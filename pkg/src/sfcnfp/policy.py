"""Policy mini-language, compilation to prioritized flow rules, overlap and aggregation.

One rule per line::

    <vnf-kind> <verb> <proto> <src> <sport> -> <dst> <dport> [priority <n>] [msg "<text>"]

Addresses are ``any``, ``EXT`` (everything outside the tenant prefixes), a CIDR
block or a single IPv4 address, optionally followed by ``!<cidr>`` exclusions.
Ports are ``any``, a single port or ``lo-hi``. ``#`` starts a comment.
"""

from __future__ import annotations

import csv
import enum
import io
import ipaddress
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .errors import DuplicateRuleError, ParseError

ADDR_MAX = 2**32 - 1
PORT_MAX = 65535
PROTO_NUMBERS = {"icmp": 1, "tcp": 6, "udp": 17}
PROTO_NAMES = {v: k for k, v in PROTO_NUMBERS.items()}
HEADER_FIELDS = frozenset({"src", "dst", "sport", "dport", "proto"})
DEFAULT_TENANTS = ("10.1.0.0/24", "192.168.1.0/24")
PRIORITY_STEP = 100


# -- match dimensions -------------------------------------------------------

def _normalize(intervals):
    out = []
    for lo, hi in sorted(intervals):
        if out and lo <= out[-1][1] + 1:
            out[-1] = (out[-1][0], max(out[-1][1], hi))
        else:
            out.append((lo, hi))
    return tuple(out)


def _subtract(intervals, lo, hi):
    out = []
    for a, b in intervals:
        if b < lo or a > hi:
            out.append((a, b))
            continue
        if a < lo:
            out.append((a, lo - 1))
        if b > hi:
            out.append((hi + 1, b))
    return out


def _measure(intervals):
    return sum(hi - lo + 1 for lo, hi in intervals)


def _intersection(xs, ys):
    out = []
    i = j = 0
    while i < len(xs) and j < len(ys):
        lo = max(xs[i][0], ys[j][0])
        hi = min(xs[i][1], ys[j][1])
        if lo <= hi:
            out.append((lo, hi))
        if xs[i][1] < ys[j][1]:
            i += 1
        else:
            j += 1
    return out


@dataclass(frozen=True, order=True)
class Prefix:
    network: int
    length: int

    def __post_init__(self):
        if not 0 <= self.length <= 32:
            raise ValueError(f"prefix length {self.length} outside [0, 32]")
        if self.network & ~self._mask() & ADDR_MAX:
            raise ValueError("host bits set in prefix")

    def _mask(self):
        return (ADDR_MAX << (32 - self.length)) & ADDR_MAX

    @classmethod
    def parse(cls, text):
        net = ipaddress.IPv4Network(text, strict=True)
        return cls(int(net.network_address), net.prefixlen)

    @property
    def lo(self):
        return self.network

    @property
    def hi(self):
        return self.network | (~self._mask() & ADDR_MAX)

    def contains(self, other: "Prefix") -> bool:
        return self.length <= other.length and self.lo <= other.lo and other.hi <= self.hi

    def sibling_of(self, other: "Prefix") -> bool:
        return (
            self.length == other.length
            and self.length > 0
            and self.network ^ other.network == 1 << (32 - self.length)
        )

    def parent(self) -> "Prefix":
        length = self.length - 1
        mask = (ADDR_MAX << (32 - length)) & ADDR_MAX
        return Prefix(self.network & mask, length)

    def __str__(self):
        return f"{ipaddress.IPv4Address(self.network)}/{self.length}"


@dataclass(frozen=True)
class AddrMatch:
    """An address dimension: ``include`` (None = any) minus the ``exclude`` prefixes."""

    include: Prefix | None = None
    exclude: tuple[Prefix, ...] = ()

    def __post_init__(self):
        if self.include is not None and self.include.length == 0:
            object.__setattr__(self, "include", None)
        object.__setattr__(self, "exclude", tuple(sorted(set(self.exclude))))
        if not self.intervals():
            raise ValueError(f"address set {self} is empty")

    def intervals(self):
        base = [(0, ADDR_MAX)] if self.include is None else [(self.include.lo, self.include.hi)]
        for p in self.exclude:
            base = _subtract(base, p.lo, p.hi)
        return _normalize(base)

    @property
    def is_any(self):
        return self.include is None and not self.exclude

    @classmethod
    def parse(cls, token, tenants=DEFAULT_TENANTS):
        head, *excl = token.split("!")
        exclude = [Prefix.parse(x) for x in excl]
        if head.upper() == "EXT":
            return cls(None, tuple(Prefix.parse(t) for t in tenants) + tuple(exclude))
        if head.lower() == "any":
            return cls(None, tuple(exclude))
        return cls(Prefix.parse(head), tuple(exclude))

    def __str__(self):
        head = "any" if self.include is None else str(self.include)
        return "!".join([head] + [str(p) for p in self.exclude])


@dataclass(frozen=True)
class PortRange:
    lo: int = 0
    hi: int = PORT_MAX

    def __post_init__(self):
        if not 0 <= self.lo <= self.hi <= PORT_MAX:
            raise ValueError(f"invalid port range {self.lo}-{self.hi}")

    def intervals(self):
        return ((self.lo, self.hi),)

    @property
    def is_any(self):
        return self.lo == 0 and self.hi == PORT_MAX

    @classmethod
    def parse(cls, token):
        if token.lower() == "any":
            return cls()
        if "-" in token:
            lo, hi = token.split("-", 1)
            return cls(int(lo), int(hi))
        return cls(int(token), int(token))

    def __str__(self):
        if self.is_any:
            return "any"
        return str(self.lo) if self.lo == self.hi else f"{self.lo}-{self.hi}"


@dataclass(frozen=True)
class Proto:
    name: str = "any"

    def __post_init__(self):
        object.__setattr__(self, "name", self.name.lower())
        if self.name != "any" and self.name not in PROTO_NUMBERS:
            raise ValueError(f"unknown protocol {self.name!r}")

    def intervals(self):
        if self.name == "any":
            return ((0, 255),)
        n = PROTO_NUMBERS[self.name]
        return ((n, n),)

    @property
    def is_any(self):
        return self.name == "any"

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class MatchPattern:
    src: AddrMatch = field(default_factory=AddrMatch)
    dst: AddrMatch = field(default_factory=AddrMatch)
    sport: PortRange = field(default_factory=PortRange)
    dport: PortRange = field(default_factory=PortRange)
    proto: Proto = field(default_factory=Proto)

    DIMS = ("src", "dst", "sport", "dport", "proto")

    def dims(self):
        return [getattr(self, d) for d in self.DIMS]

    def matches(self, packet) -> bool:
        """``packet`` is a ``(src, dst, sport, dport, proto_number)`` tuple of ints."""
        for dim, value in zip(self.dims(), packet):
            if not any(lo <= value <= hi for lo, hi in dim.intervals()):
                return False
        return True


class Overlap(enum.Enum):
    DISJOINT = "Disjoint"
    EQUAL = "Equal"
    A_CONTAINS_B = "AContainsB"
    B_CONTAINS_A = "BContainsA"
    PARTIAL = "PartialOverlap"

    def flipped(self):
        if self is Overlap.A_CONTAINS_B:
            return Overlap.B_CONTAINS_A
        if self is Overlap.B_CONTAINS_A:
            return Overlap.A_CONTAINS_B
        return self


def _dim_relation(x, y):
    xs, ys = x.intervals(), y.intervals()
    common = _measure(_intersection(xs, ys))
    mx, my = _measure(xs), _measure(ys)
    return common == 0, common == my, common == mx


def match_overlap(a: MatchPattern, b: MatchPattern) -> Overlap:
    a_contains = b_contains = True
    for x, y in zip(a.dims(), b.dims()):
        disjoint, x_has_y, y_has_x = _dim_relation(x, y)
        if disjoint:
            return Overlap.DISJOINT
        a_contains &= x_has_y
        b_contains &= y_has_x
    if a_contains and b_contains:
        return Overlap.EQUAL
    if a_contains:
        return Overlap.A_CONTAINS_B
    if b_contains:
        return Overlap.B_CONTAINS_A
    return Overlap.PARTIAL


# -- actions and rules ------------------------------------------------------

@dataclass(frozen=True)
class Forward:
    port: str = "next"

    def __str__(self):
        return f"fwd:{self.port}"


@dataclass(frozen=True)
class Mirror:
    port: str

    def __str__(self):
        return f"mirror:{self.port}"


@dataclass(frozen=True)
class FlowMod:
    fields: frozenset

    def __post_init__(self):
        object.__setattr__(self, "fields", frozenset(self.fields))
        if not self.fields:
            raise ValueError("flow_mod needs at least one rewritten field")
        unknown = self.fields - HEADER_FIELDS
        if unknown:
            raise ValueError(f"flow_mod rewrites unknown fields {sorted(unknown)}")

    def __str__(self):
        return "flow_mod:" + "+".join(sorted(self.fields))


@dataclass(frozen=True)
class Drop:
    def __str__(self):
        return "drop"


@dataclass(frozen=True)
class Encrypt:
    def __str__(self):
        return "encrypt"


RuleAction = Forward | Mirror | FlowMod | Drop | Encrypt
FORWARD_CLASS = (Forward, Mirror)
FLOW_MOD_CLASS = (FlowMod, Encrypt, Drop)


def parse_action(text: str) -> RuleAction:
    kind, _, arg = text.partition(":")
    if kind == "fwd":
        return Forward(arg or "next")
    if kind == "mirror":
        return Mirror(arg)
    if kind == "flow_mod":
        return FlowMod(frozenset(arg.split("+")))
    if kind == "drop":
        return Drop()
    if kind == "encrypt":
        return Encrypt()
    raise ValueError(f"unknown action {text!r}")


@dataclass(frozen=True)
class FlowRule:
    priority: int
    match: MatchPattern
    actions: tuple
    origin: str

    def __post_init__(self):
        if self.priority < 0:
            raise ValueError("priority must be >= 0")
        if not self.actions:
            raise ValueError("a rule needs at least one action")

    @property
    def drops(self):
        return any(isinstance(a, Drop) for a in self.actions)

    @property
    def forwards(self):
        return any(isinstance(a, Forward) for a in self.actions)

    @property
    def mirrors(self):
        return any(isinstance(a, Mirror) for a in self.actions)


def lookup(table: Sequence[FlowRule], packet):
    """Highest-priority rule matching ``packet``; ties go to the earlier rule."""
    best = None
    for rule in table:
        if rule.match.matches(packet) and (best is None or rule.priority > best.priority):
            best = rule
    return best


# -- the DSL ----------------------------------------------------------------

def _fwd():
    return (Forward("next"),)


VERBS = {
    "firewall": {"drop": lambda k: (Drop(),), "allow": lambda k: _fwd()},
    "ips": {
        "drop": lambda k: (Drop(),),
        "alert": lambda k: (Mirror(k), Forward("next")),
        "allow": lambda k: _fwd(),
    },
    "ids": {"alert": lambda k: (Mirror(k), Forward("next"))},
    "nat": {
        "snat": lambda k: (FlowMod(frozenset({"src"})), Forward("next")),
        "dnat": lambda k: (FlowMod(frozenset({"dst"})), Forward("next")),
    },
    "vpn": {"tunnel": lambda k: (Encrypt(), Forward("next"))},
    "probe": {"monitor": lambda k: (Mirror(k), Forward("next"))},
    "proxy": {
        "inspect": lambda k: (Mirror(k), Forward("next")),
        "allow": lambda k: _fwd(),
    },
    "lb": {"balance": lambda k: (FlowMod(frozenset({"dst"})), Forward("next"))},
}

_TOKEN = re.compile(r'"[^"]*"|\S+')


@dataclass(frozen=True)
class PolicyEntry:
    kind: str
    verb: str
    proto: str
    src: str
    sport: str
    dst: str
    dport: str
    rule: FlowRule
    msg: str | None = None
    priority: int | None = None  # explicit priority, if given
    line: int = 0

    def normalized(self):
        text = f"{self.kind} {self.verb} {self.proto} {self.src} {self.sport} -> {self.dst} {self.dport}"
        if self.priority is not None:
            text += f" priority {self.priority}"
        if self.msg is not None:
            text += f' msg "{self.msg}"'
        return text


@dataclass
class PolicySet:
    entries: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def rules(self):
        return [e.rule for e in self.entries]


def _canonical_addr(token):
    if token.upper() == "EXT" or token.upper().startswith("EXT!"):
        head, *rest = token.split("!")
        return "!".join(["EXT"] + [str(Prefix.parse(r)) for r in rest])
    head, *rest = token.split("!")
    if head.lower() == "any":
        head = "any"
    else:
        head = str(Prefix.parse(head))
    return "!".join([head] + [str(Prefix.parse(r)) for r in rest])


def _parse_line(text, lineno, tenants):
    toks = [(m.group(), m.start() + 1) for m in _TOKEN.finditer(text)]

    def need(i, expected):
        if i >= len(toks):
            raise ParseError("unexpected end of line", lineno, len(text) + 1, expected)
        return toks[i]

    kind, col = need(0, "vnf kind")
    kind = kind.lower()
    if kind not in VERBS:
        raise ParseError(f"unknown VNF kind {kind!r}", lineno, col, "one of " + ", ".join(VERBS))
    verb, col = need(1, "verb")
    verb = verb.lower()
    if verb not in VERBS[kind]:
        raise ParseError(f"{kind} has no verb {verb!r}", lineno, col, "one of " + ", ".join(VERBS[kind]))
    proto, col = need(2, "protocol")
    try:
        proto_v = Proto(proto)
    except ValueError as exc:
        raise ParseError(str(exc), lineno, col, "tcp, udp, icmp or any") from None

    values = {}
    for idx, name, expected in [
        (3, "src", "source address"),
        (4, "sport", "source port"),
        (5, "->", "'->'"),
        (6, "dst", "destination address"),
        (7, "dport", "destination port"),
    ]:
        tok, col = need(idx, expected)
        if name == "->":
            if tok != "->":
                raise ParseError(f"got {tok!r}", lineno, col, expected)
            continue
        try:
            if name in ("src", "dst"):
                values[name] = (_canonical_addr(tok), AddrMatch.parse(tok, tenants))
            else:
                values[name] = (str(PortRange.parse(tok)), PortRange.parse(tok))
        except ValueError as exc:
            raise ParseError(f"invalid {expected} {tok!r}: {exc}", lineno, col) from None

    priority = msg = None
    i = 8
    while i < len(toks):
        tok, col = toks[i]
        if tok == "priority":
            val, vcol = need(i + 1, "integer priority")
            if not val.isdigit():
                raise ParseError(f"got {val!r}", lineno, vcol, "integer priority")
            priority = int(val)
            i += 2
        elif tok == "msg":
            val, vcol = need(i + 1, "quoted message")
            if len(val) < 2 or not (val.startswith('"') and val.endswith('"')):
                raise ParseError(f"got {val!r}", lineno, vcol, "quoted message")
            msg = val[1:-1]
            i += 2
        else:
            raise ParseError(f"unexpected token {tok!r}", lineno, col, "'priority', 'msg' or end of line")

    match = MatchPattern(values["src"][1], values["dst"][1], values["sport"][1], values["dport"][1], proto_v)
    actions = VERBS[kind][verb](kind)
    rule = FlowRule(priority if priority is not None else 0, match, actions, kind)
    return PolicyEntry(
        kind, verb, str(proto_v), values["src"][0], values["sport"][0],
        values["dst"][0], values["dport"][0], rule, msg, priority, lineno,
    )


def parse_policy(text: str, tenants: Sequence[str] = DEFAULT_TENANTS, step: int = PRIORITY_STEP) -> PolicySet:
    """Parse a policy document. Lines without an explicit priority get
    ``step * (n - i)`` so that earlier lines win."""
    entries = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = _strip_comment(raw)
        if not body.strip():
            continue
        entries.append(_parse_line(body, lineno, tenants))
    n = len(entries)
    out = []
    for i, e in enumerate(entries):
        if e.priority is None:
            e = replace(e, rule=replace(e.rule, priority=step * (n - i)))
        out.append(e)
    return PolicySet(out)


def _strip_comment(line):
    in_quote = False
    for i, ch in enumerate(line):
        if ch == '"':
            in_quote = not in_quote
        elif ch == "#" and not in_quote:
            return line[:i]
    return line


def format_policy(ps: PolicySet) -> str:
    return "".join(e.normalized() + "\n" for e in ps)


def compile_to_flow_table(ps: PolicySet) -> list[FlowRule]:
    seen = {}
    for e in ps:
        key = (e.rule.priority, _match_key(e.rule.match))
        if key in seen:
            raise DuplicateRuleError(
                f"lines {seen[key]} and {e.line} share priority {e.rule.priority} and match"
            )
        seen[key] = e.line
    return sorted(ps.rules(), key=lambda r: -r.priority)


def _match_key(m: MatchPattern):
    return tuple(d.intervals() for d in m.dims())


# -- aggregation ------------------------------------------------------------

def _union_dim(name, x, y):
    """Single-value union of two dimension values, or None if not representable."""
    disjoint, x_has_y, y_has_x = _dim_relation(x, y)
    if x_has_y:
        return x
    if y_has_x:
        return y
    if name in ("src", "dst"):
        if x.exclude or y.exclude or x.include is None or y.include is None:
            return None
        if x.include.sibling_of(y.include):
            return AddrMatch(x.include.parent())
        return None
    if name in ("sport", "dport"):
        if y.lo <= x.hi + 1 and x.lo <= y.hi + 1:
            return PortRange(min(x.lo, y.lo), max(x.hi, y.hi))
    return None


def _try_merge(a: FlowRule, b: FlowRule):
    if a.actions != b.actions:
        return None
    differing = [
        name for name, x, y in zip(MatchPattern.DIMS, a.match.dims(), b.match.dims())
        if x.intervals() != y.intervals()
    ]
    if len(differing) > 1:
        return None
    if not differing:
        merged = a.match
    else:
        name = differing[0]
        u = _union_dim(name, getattr(a.match, name), getattr(b.match, name))
        if u is None:
            return None
        merged = replace(a.match, **{name: u})
    origin = a.origin if a.origin == b.origin else "+".join(dict.fromkeys(a.origin.split("+") + b.origin.split("+")))
    return FlowRule(max(a.priority, b.priority), merged, a.actions, origin)


def aggregate_rules(table: Iterable[FlowRule]) -> list[FlowRule]:
    """Merge priority-adjacent rules with identical actions whose matches differ
    in at most one dimension and whose union there is a single prefix or range.
    Repeats until nothing merges, so the result is a fixpoint."""
    rules = sorted(table, key=lambda r: -r.priority)
    changed = True
    while changed:
        changed = False
        out = []
        for r in rules:
            if out:
                m = _try_merge(out[-1], r)
                if m is not None:
                    out[-1] = m
                    changed = True
                    continue
            out.append(r)
        rules = out
    return rules


# -- CSV --------------------------------------------------------------------

FLOW_TABLE_COLUMNS = ["priority", "src", "sport", "dst", "dport", "proto", "actions", "origin"]


def write_flow_table(rules: Iterable[FlowRule], out=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FLOW_TABLE_COLUMNS)
    for r in rules:
        m = r.match
        w.writerow([
            r.priority, m.src, m.sport, m.dst, m.dport, m.proto,
            ";".join(str(a) for a in r.actions), r.origin,
        ])
    text = buf.getvalue()
    if out is not None:
        out.write(text)
    return text


def read_flow_table(text: str) -> list[FlowRule]:
    rows = csv.DictReader(io.StringIO(text))
    if rows.fieldnames != FLOW_TABLE_COLUMNS:
        raise ParseError(f"bad flow table header {rows.fieldnames}", 1)
    out = []
    for lineno, row in enumerate(rows, start=2):
        try:
            match = MatchPattern(
                AddrMatch.parse(row["src"], ()), AddrMatch.parse(row["dst"], ()),
                PortRange.parse(row["sport"]), PortRange.parse(row["dport"]), Proto(row["proto"]),
            )
            actions = tuple(parse_action(a) for a in row["actions"].split(";"))
            out.append(FlowRule(int(row["priority"]), match, actions, row["origin"]))
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
    return out
