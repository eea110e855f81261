import json
from collections import Counter

import pytest
from hypothesis import given, strategies as st

from sade import faultlib as F
from sade.faultlib import BENIGN, GroundTruth
from sade.probes import get_reachability, ping_direct_ip

from conftest import SCENARIOS, fresh, healthy
from oracles import FAMILY_SIZES, dns_pods, duplicate_macs


def test_catalog_shape():
    # the family table names 42 distinct labels (dns_port_blocked is listed twice)
    assert len(F.LABELS) == 42 and len(set(F.LABELS)) == 42
    assert len(F.FAMILIES) == 12
    assert set(F.FAMILY_OF.values()) == set(F.FAMILIES)
    assert dict(Counter(F.FAMILY_OF.values())) == FAMILY_SIZES


def test_ground_truth_round_trip():
    g = GroundTruth(True, frozenset({"bgp_acl_block"}), frozenset({"spine_router_1_1"}))
    assert GroundTruth.from_dict(json.loads(json.dumps(g.to_dict()))) == g
    assert not BENIGN.is_anomaly and not BENIGN.labels and not BENIGN.devices


def test_bgp_targets_are_all_clos_routers():
    t = healthy("clos_bgp", "medium")
    assert F.enumerate_targets(t, "bgp_acl_block") == sorted(d.name for d in t.routers())


def test_no_ospf_targets_in_static_scenario():
    assert F.enumerate_targets(healthy("isp_static", "medium"), "ospf_area_misconfiguration") == []


@pytest.mark.parametrize("scenario", SCENARIOS)
def test_dns_port_targets_are_exactly_the_dns_pods(scenario):
    t = healthy(scenario, "medium")
    assert F.enumerate_targets(t, "dns_port_blocked") == dns_pods(t)


def test_unknown_label_rejected():
    with pytest.raises(ValueError):
        F.enumerate_targets(healthy("clos_bgp"), "cosmic_ray")


def test_bad_target_rejected():
    with pytest.raises(ValueError):
        F.inject(healthy("clos_bgp"), "bgp_acl_block", "client_0")


def test_bgp_acl_block_mutation_and_original_untouched():
    t = healthy("clos_bgp", "large")
    before = t.to_json()
    faulty, truth = F.inject(t, "bgp_acl_block", "spine_router_2_3", 0)
    assert t.to_json() == before
    assert truth == GroundTruth(True, frozenset({"bgp_acl_block"}), frozenset({"spine_router_2_3"}))
    chains = faulty.devices["spine_router_2_3"].acl.chains
    for chain in ("input", "forward", "output"):
        rules = [r for r in chains[chain] if r.verdict == "drop" and r.proto == "tcp"]
        assert any(r.dport == 179 for r in rules) and any(r.sport == 179 for r in rules)


def test_host_crash_silences_the_host():
    faulty, _ = F.inject(healthy("campus_ospf_service", "small"), "host_crash", "client_0")
    for e in get_reachability(faulty):
        if "client_0" in (e.source, e.destination):
            assert e.status != "ok"
    ip = faulty.manifest["client_0"]["ip"]
    for h in faulty.hosts():
        if h.name != "client_0":
            assert ping_direct_ip(faulty, h.name, ip).status != "ok"


def test_mac_conflict_yields_exactly_one_shared_mac():
    t = healthy("campus_ospf_service", "medium", 5)
    assert duplicate_macs(t) == {}
    faulty, _ = F.inject(t, "mac_address_conflict", "client_2", 5)
    dups = duplicate_macs(faulty)
    assert len(dups) == 1
    owners = next(iter(dups.values()))
    assert len(owners) == 2 and len({d for d, _ in owners}) == 2


def test_verify_healthy_claiming_link_down():
    v = F.verify_injection(healthy("clos_bgp"), GroundTruth(True, frozenset({"link_down"}), frozenset({"client_0"})))
    assert not v.verified and str(v) == "not_manifest(all links up)"


def test_dns_latency_verified_iff_over_threshold():
    t = healthy("clos_bgp", "medium")
    faulty, truth = F.inject(t, "dns_lookup_latency", "dns_pod1")
    assert faulty.devices["dns_pod1"].services.dns.lookup_latency_ms == F.DNS_INJECTED_LATENCY_MS
    assert F.DNS_INJECTED_LATENCY_MS > F.DNS_LATENCY_THRESHOLD_MS
    assert F.verify_injection(faulty, truth).verified
    faulty.devices["dns_pod1"].services.dns.lookup_latency_ms = F.DNS_LATENCY_THRESHOLD_MS
    assert not F.verify_injection(faulty, truth).verified


def test_make_benign_is_deterministic_and_quiet():
    t = healthy("clos_bgp")
    a, b = F.make_benign(t), F.make_benign(t)
    assert a.truth == b.truth == BENIGN
    assert a.topology.to_json() == b.topology.to_json()
    assert F.manifested(t) == []


@pytest.mark.parametrize("scenario", SCENARIOS)
def test_no_predicate_fires_on_healthy_topologies(scenario):
    for size in ("small", "medium", "large"):
        assert F.verify_injection(healthy(scenario, size), BENIGN).verified


def _changed_devices(a, b) -> set[str]:
    da, db = a.to_dict()["devices"], b.to_dict()["devices"]
    return {n for n in da if da[n] != db[n]}


def _changed_links(a, b) -> list[tuple]:
    return [(la.a, la.b) for la, lb in zip(a.links, b.links) if la != lb]


def _cells(scenario):
    t = healthy(scenario, "medium")
    for label in F.LABELS:
        targets = F.enumerate_targets(t, label)
        for target in sorted({targets[0], targets[-1]}) if targets else []:
            yield label, target


@pytest.mark.parametrize("scenario", SCENARIOS)
def test_inject_then_verify_and_single_fault_diff(scenario):
    t = healthy(scenario, "medium")
    for label, target in _cells(scenario):
        faulty, truth = F.inject(t, label, target, 0)
        assert F.verify_injection(faulty, truth).verified, (label, target)
        assert F.manifests(faulty, label, target)
        touched = _changed_devices(t, faulty)
        assert touched <= {target}, (label, target, touched)
        for a, b in _changed_links(t, faulty):
            assert target in (a[0], b[0]), (label, target)
        assert touched or _changed_links(t, faulty), (label, target)


@given(st.sampled_from(F.LABELS), st.sampled_from(SCENARIOS), st.integers(0, 50))
def test_injection_deterministic(label, scenario, seed):
    t = healthy(scenario, "small")
    targets = F.enumerate_targets(t, label)
    if not targets:
        return
    target = targets[seed % len(targets)]
    a, _ = F.inject(t, label, target, seed)
    b, _ = F.inject(t, label, target, seed)
    assert a.to_json() == b.to_json()


def test_incident_ids_and_serialization():
    inc = F.make_incident("clos_bgp", "small", 0, "bgp_acl_block")
    body = json.loads(inc.to_json())
    assert body == {"incident_id": inc.incident_id, "scenario": "clos_bgp", "size": "small", "seed": 0,
                    "label": "bgp_acl_block", "target": inc.target}
    again = F.incident_from_dict(body)
    assert again.topology.to_json() == inc.topology.to_json()
    benign = F.make_incident("clos_bgp", "small", 0)
    assert benign.incident_id.endswith("benign") and benign.truth == BENIGN
