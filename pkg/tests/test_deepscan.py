import pytest
from hypothesis import given, strategies as st

from sade import deepscan as D
from sade import faultlib as F
from sade.netmodel import converge
from sade.netmodel.model import Qdisc
from sade.probes import ToolCallLedger, run_probe

from conftest import SCENARIOS, fresh, healthy
from oracles import duplicate_macs


def _inject(scenario, size, label, target=None):
    t = healthy(scenario, size)
    target = target or F.enumerate_targets(t, label)[0]
    return F.inject(t, label, target)[0], target


def test_bgp_block_on_spine_gives_exactly_one_infra_flag():
    t, _ = _inject("clos_bgp", "large", "bgp_acl_block", "spine_router_2_3")
    flags = D.infra_sweep(t)
    assert [(f.device, f.hint) for f in flags] == [("spine_router_2_3", "bgp_acl_block")]


def test_dns_port_block_flagged_on_the_pod():
    t, _ = _inject("clos_bgp", "large", "dns_port_blocked", "dns_pod2")
    assert ("dns_pod2", "dns_port_blocked") in [(f.device, f.hint) for f in D.infra_sweep(t)]


@pytest.mark.parametrize("scenario", SCENARIOS)
@pytest.mark.parametrize("size", ["small", "medium", "large"])
def test_every_sweep_silent_on_healthy(scenario, size):
    t = healthy(scenario, size)
    for phase in D.PHASES:
        assert D.run_phase(t, phase).clean, phase


def test_mac_conflict_flags_both_owners():
    t, target = _inject("campus_ospf_service", "medium", "mac_address_conflict", "client_2")
    flags = [f for f in D.l2_snapshot(t) if f.hint == "mac_address_conflict"]
    (mac, owners), = duplicate_macs(t).items()
    assert {f.device for f in flags} == {d for d, _ in owners}
    assert all(sorted(f.evidence["interfaces"]) == sorted(f"{d}:{i}" for d, i in owners) for f in flags)


def test_three_way_mac_share_covers_all_owners():
    t = fresh("clos_bgp", "medium")
    mac = t.devices["client_0"].interfaces[0].mac
    t.devices["client_1"].interfaces[0].mac = mac
    t.devices["web_server1"].interfaces[0].mac = mac
    expected = {d for owners in duplicate_macs(t).values() for d, _ in owners}
    assert expected == {"client_0", "client_1", "web_server1"}
    flagged = {f.device for f in D.l2_snapshot(t) if f.hint == "mac_address_conflict"}
    assert flagged == expected


def test_dead_routing_stack_flagged_with_evidence():
    t, target = _inject("campus_ospf_service", "medium", "frr_service_down", "core_router_1")
    flags = [f for f in D.ospf_snapshot(t) if f.device == target]
    assert [f.hint for f in flags] == ["frr_service_down"]
    assert "ospfd" not in flags[0].evidence["processes"]


def test_empty_neighbor_table_flagged():
    t, target = _inject("campus_ospf_service", "medium", "ospf_neighbor_missing", "dist_router_1")
    flags = [f for f in D.ospf_snapshot(t) if f.hint == "ospf_neighbor_missing"]
    assert [f.device for f in flags] == [target] and flags[0].evidence["neighbors"] == []


def test_throttle_flag_names_interface_and_rate():
    t, target = _inject("clos_bgp", "small", "link_bandwidth_throttling", "client_1")
    flags = D.tc_snapshot(t)
    assert len(flags) == 1
    f = flags[0]
    assert f.device == target and f.evidence["iface"] == t.devices[target].interfaces[0].name
    assert str(F.THROTTLE_KBIT) in f.evidence["qdisc"]


def test_two_shaped_interfaces_two_flags():
    t = fresh("isp_static", "small")
    shaped = []
    for d in ("client_0", "client_2"):
        iface = t.devices[d].interfaces[0]
        iface.qdisc = Qdisc("rate_limit", 128)
        shaped.append((d, iface.name))
    assert sorted((f.device, f.evidence["iface"]) for f in D.tc_snapshot(t)) == sorted(shaped)


def test_wrong_gateway_flagged_on_host():
    t, target = _inject("campus_ospf_service", "medium", "host_wrong_gateway")
    flag = D.host_path_snapshot(t, target, D.path_target(t, target))
    assert flag is not None and (flag.device, flag.hint) == (target, "host_wrong_gateway")


def test_flap_visible_in_link_history():
    t, target = _inject("isp_static", "medium", "link_flap")
    flags = D.dhcp_link_history(t, target)
    assert [f.hint for f in flags] == ["link_flap"]
    assert flags[0].evidence["carrier_events"] >= D.FLAP_MIN_CHANGES


@pytest.mark.parametrize("scenario", SCENARIOS)
def test_healthy_host_path_matches_rib(scenario):
    t = healthy(scenario, "medium")
    ribs = converge(t)
    for h in t.hosts():
        target = D.path_target(t, h.name)
        assert D.host_path_snapshot(t, h.name, target) is None
        rg = run_probe(t, h.name, "route_get", arg=target).data
        entry = ribs[h.name].lookup(target)
        assert rg["next_hop_ip"] == entry.next_hop_ip and rg["arp"] == "reachable"


def test_dns_latency_flagged_on_pod():
    t, target = _inject("campus_ospf_service", "small", "dns_lookup_latency")
    assert [f.hint for f in D.service_snapshot(t, target)] == ["dns_lookup_latency"]


def test_dos_flagged_by_pressure_sweep():
    t, target = _inject("clos_bgp", "medium", "web_dos_attack")
    flags = D.pressure_sweep(t)
    assert [(f.device, f.hint) for f in flags] == [(target, "web_dos_attack")]
    assert flags[0].evidence["open_sockets"] > F.SOCKET_THRESHOLD


def test_deep_scan_stops_after_phase_a_for_bgp_block():
    t, _ = _inject("clos_bgp", "large", "bgp_acl_block", "spine_router_2_3")
    reports, flags = D.deep_scan(t)
    assert [r.phase for r in reports] == ["A"]
    assert [(f.device, f.hint) for f in flags] == [("spine_router_2_3", "bgp_acl_block")]
    assert reports[0].trace_lines() == ["PA: infra_sweep: spine_router_2_3 bgp_acl_block", "PA: l2_snapshot: clean"]


def test_neighbor_loss_reaches_phase_b():
    t, _ = _inject("campus_ospf_service", "medium", "ospf_neighbor_missing", "dist_router_1")
    reports, flags = D.deep_scan(t)
    assert [r.phase for r in reports] == ["A", "B"] and reports[0].clean
    assert {f.family for f in flags} == {"ospf"}


def test_healthy_runs_all_four_phases():
    reports, flags = D.deep_scan(healthy("isp_static", "medium"))
    assert [r.phase for r in reports] == list(D.PHASES) and flags == []


def test_sweeps_charge_once_per_device():
    t = healthy("clos_bgp", "medium")
    ledger = ToolCallLedger()
    D.infra_sweep(t, ledger)
    assert ledger.count == sum(1 for d in t.devices.values() if d.kind != "switch")
    ledger = ToolCallLedger()
    D.safe_reachability(t, ledger)
    assert ledger.count == 1


def test_unresolvable_hint_rejected():
    with pytest.raises(ValueError):
        D.family_of_hint("gremlins")
    assert D.family_of_hint("host_missing_route") == "host_ip"


def _grid_cells(size):
    for scenario in SCENARIOS:
        t = healthy(scenario, size)
        for label in F.LABELS:
            targets = F.enumerate_targets(t, label)
            if targets:
                yield scenario, label, targets[-1]


@pytest.mark.parametrize("scenario,label,target", list(_grid_cells("medium")))
def test_soundness_and_phase_order(scenario, label, target):
    t, _ = F.inject(healthy(scenario, "medium"), label, target)
    reports, flags = D.deep_scan(t)
    phases = [r.phase for r in reports]
    assert phases == list(D.PHASES[:len(phases)])
    assert all(r.clean for r in reports[:-1]) and not reports[-1].clean
    assert any(f.family == F.FAMILY_OF[label] and target in (f.device, *f.suspects) for f in flags)
    for f in flags:
        assert f.evidence and f.phase == phases[-1]
        assert D.recheck(t, f)


@given(st.sampled_from(SCENARIOS), st.sampled_from(F.LABELS), st.integers(0, 99))
def test_flags_always_resolve_to_a_family(scenario, label, k):
    t = healthy(scenario, "small")
    targets = F.enumerate_targets(t, label)
    if not targets:
        return
    faulty, _ = F.inject(t, label, targets[k % len(targets)], k)
    _, flags = D.deep_scan(faulty)
    for f in flags:
        assert f.family in F.FAMILIES
