import itertools

import hypothesis.strategies as st
import pytest
from hypothesis import given, settings

from oracles import min_stages_brute_force
from sfcnfp.dependency import (
    KINDS, PROFILES, AccessProfile, HazardKind, NfpDecision, StagePlan, VnfInstance,
    build_stage_plan, classify_pair, co_stageable, format_chain, nfp_action_rule,
    parallelizable, parse_chain, reorder_chain, rules_by_kind,
)
from sfcnfp.errors import InfeasibleError, ParseError
from sfcnfp.policy import Drop, Encrypt, FlowMod, Forward, Mirror, compile_to_flow_table, parse_policy

# Header / payload access per function: "R", "R/W", "W" or "-".
READ_WRITE_TABLE = {
    "probe": ("R", "-"),
    "nat": ("R/W", "-"),
    "firewall": ("R/W", "-"),
    "proxy": ("R", "R"),
    "ids": ("R", "R"),
    "ips": ("R/W", "R"),
    "lb": ("R/W", "R"),
    "vpn": ("R/W", "W"),
}


def expected_hazard(a, b):
    if "-" in (a, b):
        return "NONE"
    return {(False, False): "RAR", (False, True): "WAR",
            (True, False): "RAW", (True, True): "WAW"}["W" in a, "W" in b]


def vnf(kind, vid=None, mu=1.0, c=1):
    return VnfInstance(vid or kind, kind, mu, c)


def test_profiles_reproduce_read_write_table():
    for kind, (header, payload) in READ_WRITE_TABLE.items():
        p = PROFILES[kind]
        assert p.header == header.replace("/", "")
        assert p.payload == payload.replace("/", "")
    assert PROFILES["firewall"].can_drop and PROFILES["ips"].can_drop
    assert not PROFILES["ids"].can_drop
    assert PROFILES["vpn"].encrypts_payload


def test_encryptor_must_write_payload():
    with pytest.raises(ValueError):
        AccessProfile(header="R", payload="R", encrypts_payload=True)


@pytest.mark.parametrize("first,second", list(itertools.product(KINDS, KINDS)))
def test_hazard_truth_table(first, second):
    hz = classify_pair(vnf(first, "a"), vnf(second, "b"))
    assert [h.region for h in hz] == ["header", "payload"]
    for h, i in zip(hz, range(2)):
        assert h.kind.value == expected_hazard(READ_WRITE_TABLE[first][i], READ_WRITE_TABLE[second][i])


@pytest.mark.parametrize("first,second,header,payload", [
    ("probe", "nat", "WAR", "NONE"),
    ("ids", "firewall", "WAR", "NONE"),
    ("lb", "ips", "WAW", "RAR"),
])
def test_quoted_classifications(first, second, header, payload):
    h, p = classify_pair(vnf(first, "a"), vnf(second, "b"))
    assert (h.kind.value, p.kind.value) == (header, payload)


SWAP = {"WAR": "RAW", "RAW": "WAR", "RAR": "RAR", "WAW": "WAW", "NONE": "NONE"}


@pytest.mark.parametrize("first,second", list(itertools.product(KINDS, KINDS)))
def test_swap_exchanges_war_and_raw(first, second):
    ab = classify_pair(vnf(first, "a"), vnf(second, "b"))
    ba = classify_pair(vnf(second, "b"), vnf(first, "a"))
    assert [SWAP[h.kind.value] for h in ab] == [h.kind.value for h in ba]


def test_parallelizable_examples():
    assert parallelizable(vnf("ids"), vnf("firewall"))
    assert not parallelizable(vnf("lb"), vnf("ips"))
    assert parallelizable(vnf("probe", "p1"), vnf("probe", "p2"))


@pytest.mark.parametrize("first,second", list(itertools.product(KINDS, KINDS)))
def test_parallelizable_excludes_raw_and_waw(first, second):
    kinds = {h.kind for h in classify_pair(vnf(first, "a"), vnf(second, "b"))}
    expected = not kinds & {HazardKind.RAW, HazardKind.WAW}
    assert parallelizable(vnf(first, "a"), vnf(second, "b")) is expected


def test_drop_conflict_needs_overlapping_rules():
    fw, ids = vnf("firewall"), vnf("ids")
    overlapping = rules_by_kind([fw, ids], compile_to_flow_table(parse_policy(
        "firewall drop tcp EXT any -> 10.1.0.0/24 80\nids alert any EXT any -> 10.1.0.0/24 any\n")))
    disjoint = rules_by_kind([fw, ids], compile_to_flow_table(parse_policy(
        "firewall drop tcp EXT any -> 192.168.1.0/24 80\nids alert any EXT any -> 10.1.0.0/24 any\n")))
    assert not co_stageable(fw, ids, overlapping)
    assert co_stageable(fw, ids, disjoint)
    assert co_stageable(fw, ids)


def test_nfp_action_rule():
    fm = FlowMod(frozenset({"dst"}))
    assert nfp_action_rule(Forward(), Forward()) is NfpDecision.PARALLEL
    assert nfp_action_rule(Forward(), fm) is NfpDecision.PARALLEL
    assert nfp_action_rule(fm, Forward()) is NfpDecision.SERIAL
    assert nfp_action_rule(fm, fm) is NfpDecision.SERIAL
    assert nfp_action_rule(Mirror("ids"), Encrypt()) is NfpDecision.PARALLEL
    assert nfp_action_rule(Drop(), Mirror("ids")) is NfpDecision.SERIAL


# -- stage plans -------------------------------------------------------------

def test_nat_firewall_ids_plan():
    plan = build_stage_plan([vnf("nat"), vnf("firewall"), vnf("ids")])
    assert plan.stages == [["nat"], ["firewall", "ids"]]
    assert min_stages_brute_force([vnf("nat"), vnf("firewall"), vnf("ids")], co_stageable) == 2


def test_singleton_and_serial_plans():
    assert build_stage_plan([vnf("probe")]).stages == [["probe"]]
    assert len(build_stage_plan([vnf("lb"), vnf("ips")])) == 2


def test_plan_rejects_bad_chains():
    with pytest.raises(ValueError):
        build_stage_plan([])
    with pytest.raises(ValueError):
        build_stage_plan([vnf("ids"), vnf("ids")])


def check_plan(chain, plan):
    assert plan.order() == [v.id for v in chain]
    for a, b in itertools.combinations(chain, 2):
        if not co_stageable(a, b):
            assert plan.stage_of(a.id) < plan.stage_of(b.id)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.sampled_from(KINDS), min_size=1, max_size=7))
def test_plan_invariants(kinds):
    chain = [vnf(k, f"{k}{i}") for i, k in enumerate(kinds)]
    plan = build_stage_plan(chain)
    check_plan(chain, plan)
    if len(chain) <= 5:
        assert len(plan) == min_stages_brute_force(chain, co_stageable)


def test_stage_plan_json_round_trip():
    plan = build_stage_plan([vnf("nat"), vnf("firewall"), vnf("ids"), vnf("lb")])
    assert StagePlan.from_json(plan.to_json()) == plan
    with pytest.raises(ParseError):
        StagePlan.from_json('{"a": 1}')
    with pytest.raises(ValueError):
        StagePlan([["a"], ["a"]])


# -- reordering ----------------------------------------------------------------

TABLE_I_RULES = compile_to_flow_table(parse_policy(
    "ids alert any EXT any -> 10.1.0.0/24 any\n"
    "firewall drop tcp EXT any -> 10.1.0.0/24 80\n"
))


def test_firewall_moves_ahead_of_ids():
    chain = [vnf("ids"), vnf("firewall")]
    out = reorder_chain(chain, rules_by_kind(chain, TABLE_I_RULES))
    assert [v.id for v in out] == ["firewall", "ids"]


def test_firewall_stays_when_drop_not_covered():
    chain = [vnf("ids"), vnf("firewall")]
    rules = rules_by_kind(chain, compile_to_flow_table(parse_policy(
        "ids alert any EXT any -> 10.1.0.0/24 80\nfirewall drop tcp EXT any -> 10.1.0.0/24 any\n")))
    assert [v.id for v in reorder_chain(chain, rules)] == ["ids", "firewall"]


def test_ids_moves_ahead_of_vpn():
    assert [v.id for v in reorder_chain([vnf("vpn"), vnf("ids")])] == ["ids", "vpn"]


def test_reorder_singleton_and_stability():
    assert [v.id for v in reorder_chain([vnf("probe")])] == ["probe"]
    chain = [vnf("nat"), vnf("probe"), vnf("vpn"), vnf("lb"), vnf("firewall")]
    assert [v.id for v in reorder_chain(chain)] == ["nat", "probe", "lb", "vpn", "firewall"]


def test_reorder_reports_cycles():
    both = AccessProfile(header="RW", payload="RW", encrypts_payload=True)
    a = VnfInstance("a", "vpn", profile=both)
    b = VnfInstance("b", "vpn", profile=both)
    with pytest.raises(InfeasibleError):
        reorder_chain([a, b])


@settings(max_examples=300, deadline=None)
@given(st.lists(st.sampled_from(KINDS), min_size=1, max_size=8))
def test_reorder_puts_readers_before_encryptors(kinds):
    chain = [vnf(k, f"{k}{i}") for i, k in enumerate(kinds)]
    out = reorder_chain(chain)
    assert sorted(v.id for v in out) == sorted(v.id for v in chain)
    pos = {v.id: i for i, v in enumerate(out)}
    for r in chain:
        for e in chain:
            if r.profile.reads_payload and e.profile.encrypts_payload:
                assert pos[r.id] < pos[e.id]


# -- chain files -------------------------------------------------------------

def test_chain_file_round_trip():
    text = "# chain\nnat nat mu=2.5 c=2\nfw firewall mu=3.0 c=1 drop=0.1\n\nids ids mu=4.0 c=4\n"
    chain = parse_chain(text)
    assert [(v.id, v.kind, v.mu, v.c) for v in chain] == [
        ("nat", "nat", 2.5, 2), ("fw", "firewall", 3.0, 1), ("ids", "ids", 4.0, 4)]
    assert chain[1].drop_probability == 0.1
    assert parse_chain(format_chain(chain)) == chain


@pytest.mark.parametrize("text,line", [
    ("a router mu=1 c=1", 1),
    ("a nat mu=1", 1),
    ("a nat\n", 1),
    ("a nat mu=1 c=1\nb nat mu=0 c=1", 2),
    ("a nat mu=1 c=1\na ids mu=1 c=1", 2),
    ("a nat mu=1 c=1 speed=3", 1),
    ("a", 1),
])
def test_chain_file_errors(text, line):
    with pytest.raises(ParseError) as info:
        parse_chain(text)
    assert info.value.line == line
