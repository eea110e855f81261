import json
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from sade import deepscan as D
from sade import faultlib as F
from sade.probes import PROBE_KINDS, ToolCallLedger
from sade.skills import (BROAD_SEARCH, Match, SkillError, Symptom, canonicalize, candidates, execute_skill,
                         load_default, map_symptom, parse_skill, symptoms_from_flags, validate_bank)
from sade.skills.loader import PSEUDO_PROBES
from sade.skills.predicates import REGISTRY

from conftest import SCENARIOS, fresh, healthy

GOLDEN = Path(__file__).parent / "golden"
BANK = load_default()


def _owner(label):
    return next(s for s in BANK.values() if label in s.labels)


def test_bank_covers_catalog_once():
    assert len(BANK) == 12
    assert {s.family for s in BANK.values()} == set(F.FAMILIES)
    owned = [label for s in BANK.values() for label in s.labels]
    assert sorted(owned) == sorted(F.LABELS)
    assert _owner("dns_port_blocked").id == "acl"
    assert BANK["dns"].delegates == {"dns_port_blocked": "acl"}


def test_every_clause_uses_known_probes_and_predicates():
    for skill in BANK.values():
        for fp in skill.fingerprints:
            plan = {s.kind for s in fp.steps}
            assert plan <= set(PROBE_KINDS) | set(PSEUDO_PROBES)
            for c in fp.clauses:
                assert c.kind in plan and c.predicate in REGISTRY


def test_loader_fails_fast_on_unowned_label():
    without_crash = [s for s in BANK.values() if s.id != "host_crash"]
    with pytest.raises(SkillError, match="host_crash"):
        validate_bank(without_crash)


def test_loader_rejects_double_ownership():
    twin = parse_skill("skill crash2\nfamily host_crash\ncandidates host\n"
                       "fingerprint host_crash\n probe iface_addr\n require iface_addr unresponsive\n")
    with pytest.raises(SkillError, match="owned by both"):
        validate_bank([*BANK.values(), twin])


@pytest.mark.parametrize("text,needle", [
    ("family link\n", "before skill header"),
    ("skill x\nfamily link\nbogus y\n", "unknown directive"),
    ("skill x\nfamily link\nprobe iface_addr\n", "outside fingerprint"),
    ("skill x\nfamily link\nfingerprint link_down\n require iface_addr link_state is=down\n", "outside the probe plan"),
    ("skill x\nfamily link\nfingerprint link_down\n probe iface_addr\n require iface_addr no_such_pred\n", "unknown predicate"),
    ("skill x\nfamily link\nfingerprint host_crash\n probe iface_addr\n require iface_addr unresponsive\n", "belongs to family"),
    ("skill x\nfamily link\nfingerprint link_down\n probe iface_addr\n require iface_addr link_state is\n", "bad parameter"),
])
def test_loader_errors(text, needle):
    with pytest.raises(SkillError, match=needle):
        validate_bank([parse_skill(text)])


def test_ospf_guard_routes_down_interface_to_link():
    t = fresh("campus_ospf_service", "medium")
    dev = t.devices["dist_router_1"]
    iface = next(i for i in dev.interfaces if i.addr)
    t.link_of(dev.name, iface.name).state = "down"
    s = Symptom("flag", "B", ["dist_router_1"], family="ospf", hints=["ospf_neighbor_missing"], confirmed=True)
    ledger = ToolCallLedger()
    routing = map_symptom(s, t, ledger)
    assert routing.skill == "link" and routing.devices == ["dist_router_1"]
    assert ledger.count == 1 and "iface_addr" in ledger.entries[0][1]


def test_ospf_guard_keeps_up_interface_in_ospf():
    faulty, _ = F.inject(healthy("campus_ospf_service", "medium"), "ospf_neighbor_missing", "dist_router_1")
    s = Symptom("flag", "B", ["dist_router_1"], family="ospf", hints=["ospf_neighbor_missing"], confirmed=True)
    assert map_symptom(s, faulty).skill == "ospf"


def test_family_tagged_flag_routes_without_guards():
    faulty, _ = F.inject(healthy("clos_bgp", "large"), "dns_port_blocked", "dns_pod2")
    (s,) = symptoms_from_flags(D.infra_sweep(faulty))
    s.confirmed = True
    ledger = ToolCallLedger()
    routing = map_symptom(s, faulty, ledger)
    assert (routing.skill, routing.devices, ledger.count) == ("acl", ["dns_pod2"], 0)


def test_unconfirmed_symptom_refused():
    with pytest.raises(ValueError):
        map_symptom(Symptom("flag", "A", ["client_0"], family="acl"), healthy("clos_bgp"))


def test_unexplained_reachability_goes_to_broad_search():
    s = Symptom("reachability_loss", "1", ["client_0", "leaf_router_1"], confirmed=True)
    assert map_symptom(s, healthy("clos_bgp")).skill == BROAD_SEARCH


def test_ospf_skill_finds_dead_stack():
    faulty, _ = F.inject(healthy("campus_ospf_service", "medium"), "frr_service_down", "core_router_1")
    ex = execute_skill(BANK["ospf"], faulty, ["core_router_1"], hints=["ospf_neighbor_missing"])
    assert ex.match is not None
    assert (ex.match.label, ex.match.devices) == ("frr_service_down", frozenset({"core_router_1"}))


def test_acl_skill_on_blocked_dns_pod():
    faulty, _ = F.inject(healthy("clos_bgp", "large"), "dns_port_blocked", "dns_pod2")
    ex = execute_skill(BANK["acl"], faulty, ["dns_pod2"])
    assert (ex.match.label, ex.match.devices) == ("dns_port_blocked", frozenset({"dns_pod2"}))


def test_dns_skill_delegates_port_block():
    faulty, _ = F.inject(healthy("clos_bgp", "large"), "dns_port_blocked", "dns_pod2")
    ex = execute_skill(BANK["dns"], faulty, ["dns_pod2"], bank=BANK)
    assert ex.match.label == "dns_port_blocked"


@pytest.mark.parametrize("skill", sorted(BANK))
def test_skills_miss_on_healthy(skill):
    t = healthy("campus_ospf_service", "medium")
    ex = execute_skill(BANK[skill], t, [], bank=BANK)
    assert ex.match is None and len(ex.attempts) >= len(BANK[skill].fingerprints)


def test_candidates_expand_to_family_class_when_unnamed():
    t = healthy("campus_ospf_service", "medium")
    assert candidates(BANK["ospf"], t, []) == [d.name for d in t.routers()]
    assert candidates(BANK["ospf"], t, ["client_0", "dist_router_2"]) == ["dist_router_2"]


def test_canonicalize_examples():
    m = Match("bgp_acl_block", frozenset({"spine_router_2_3"}), [], 0, "acl")
    assert canonicalize(m) == {"labels": ["bgp_acl_block"], "devices": ["spine_router_2_3"]}
    with pytest.raises(AssertionError):
        canonicalize(Match("bgp_acl_block", frozenset(), [], 0, "acl"))


def test_canonicalize_golden_bytes():
    faulty, _ = F.inject(healthy("clos_bgp", "large"), "dns_port_blocked", "dns_pod2")
    ex = execute_skill(BANK["acl"], faulty, ["dns_pod2"])
    got = json.dumps(canonicalize(ex.match), sort_keys=True) + "\n"
    assert got == (GOLDEN / "dns_port_blocked_fragment.json").read_text()


def _label_cells():
    out = []
    for scenario in SCENARIOS:
        t = healthy(scenario, "small")
        for label in F.LABELS:
            targets = F.enumerate_targets(t, label)
            if targets:
                out.append((scenario, label, targets[0]))
    return out


@given(st.sampled_from(_label_cells()))
def test_owner_skill_matches_and_stops_at_decisive_probe(cell):
    scenario, label, target = cell
    faulty, _ = F.inject(healthy(scenario, "small"), label, target)
    ledger = ToolCallLedger()
    ex = execute_skill(_owner(label), faulty, [target], ledger, hints=[label])
    assert ex.match is not None and ex.match.label == label and ex.match.devices == {target}
    assert ex.match.decisive_index == ledger.count - 1
