"""Reference computations that share no code path with the package internals."""

import ipaddress
import itertools

import numpy as np


# -- queueing: numerical birth-death chain ----------------------------------

def birth_death(lam, mu, c, n_states=100_000):
    """Stationary distribution of the truncated M/M/c chain, built only from the
    local balance ratio p_n / p_{n-1} = lam / (min(n, c) mu), normalized in log space."""
    n = np.arange(1, n_states)
    log_ratio = np.log(lam) - np.log(np.minimum(n, c) * mu)
    log_p = np.concatenate([[0.0], np.cumsum(log_ratio)])
    log_p -= log_p.max()
    p = np.exp(log_p)
    return p / p.sum()


def birth_death_metrics(lam, mu, c, n_states=100_000):
    p = birth_death(lam, mu, c, n_states)
    n = np.arange(len(p))
    pi_w = p[c:].sum()
    lq = (np.maximum(n - c, 0) * p).sum()
    return {"p0": p[0], "pi_w": pi_w, "e_lq": lq, "e_w": lq / lam}


# -- packet-set enumeration -------------------------------------------------

PROTO_CODES = {"icmp": 1, "tcp": 6, "udp": 17}


def addr_mask(text, universe):
    head, *excl = text.split("!")
    if head == "any":
        mask = np.ones(len(universe), dtype=bool)
    else:
        net = ipaddress.ip_network(head)
        mask = np.array([a in net for a in universe])
    for e in excl:
        net = ipaddress.ip_network(e)
        mask &= np.array([a not in net for a in universe])
    return mask


def port_mask(text, universe):
    if text == "any":
        return np.ones(len(universe), dtype=bool)
    lo, _, hi = text.partition("-")
    lo, hi = int(lo), int(hi or lo)
    return np.array([lo <= p <= hi for p in universe])


def proto_mask(text, universe):
    if text == "any":
        return np.ones(len(universe), dtype=bool)
    return np.array([p == PROTO_CODES[text] for p in universe])


class Universe:
    """A small packet universe; matched sets are materialized as 5-D boolean arrays."""

    def __init__(self, src, dst, sport, dport, protos=(1, 6, 17, 47)):
        self.src = [ipaddress.ip_address(a) for a in src]
        self.dst = [ipaddress.ip_address(a) for a in dst]
        self.sport = list(sport)
        self.dport = list(dport)
        self.protos = list(protos)

    @property
    def shape(self):
        return (len(self.src), len(self.dst), len(self.sport), len(self.dport), len(self.protos))

    def packet_set(self, m):
        masks = [
            addr_mask(str(m.src), self.src),
            addr_mask(str(m.dst), self.dst),
            port_mask(str(m.sport), self.sport),
            port_mask(str(m.dport), self.dport),
            proto_mask(str(m.proto), self.protos),
        ]
        out = np.ones(self.shape, dtype=bool)
        for axis, mk in enumerate(masks):
            shape = [1] * 5
            shape[axis] = -1
            out = out & mk.reshape(shape)
        return out


def relation_by_enumeration(a, b, universe):
    sa, sb = universe.packet_set(a), universe.packet_set(b)
    both = sa & sb
    if not both.any():
        return "Disjoint"
    a_has_b = not (sb & ~sa).any()
    b_has_a = not (sa & ~sb).any()
    if a_has_b and b_has_a:
        return "Equal"
    if a_has_b:
        return "AContainsB"
    if b_has_a:
        return "BContainsA"
    return "PartialOverlap"


def classify_all(table, universe, labels):
    """Label of the winning action list for every packet (-1: no match).
    Winner is the highest priority; ties go to the earlier rule. ``labels`` maps
    action lists to ints and is shared across calls so results are comparable."""
    order = sorted(range(len(table)), key=lambda i: -table[i].priority)
    out = np.full(universe.shape, -1, dtype=int)
    for i in order:
        r = table[i]
        lab = labels.setdefault(r.actions, len(labels))
        hit = universe.packet_set(r.match) & (out == -1)
        out[hit] = lab
    return out


def small_universe():
    """4-bit address space inside 10.0.0.0/28 plus one outside address per side;
    ports 0..7 plus one outside port."""
    addrs = [f"10.0.0.{i}" for i in range(16)] + ["172.16.0.1"]
    ports = list(range(8)) + [1000]
    return Universe(addrs, addrs, ports, ports)


# -- stage plans ------------------------------------------------------------

def min_stages_brute_force(chain, compatible):
    """Fewest stages over all splits of the chain into consecutive groups whose
    members are pairwise compatible."""
    n = len(chain)
    best = n
    for cuts in itertools.product([False, True], repeat=n - 1):
        groups, cur = [], [chain[0]]
        for cut, v in zip(cuts, chain[1:]):
            if cut:
                groups.append(cur)
                cur = [v]
            else:
                cur.append(v)
        groups.append(cur)
        if all(compatible(a, b) for g in groups for a, b in itertools.combinations(g, 2)):
            best = min(best, len(groups))
    return best
