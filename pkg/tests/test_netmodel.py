import copy

import pytest
from hypothesis import given, strategies as st

from sade.netmodel import Topology, build_scenario, control_plane, converge, validate
from sade.netmodel.model import AclRuleset, Rule, parse_cidr
from sade.netmodel.converge import Rib, RibEntry
from sade.probes import get_reachability

from conftest import SCENARIOS, SIZES, fresh, healthy
from oracles import NODE_COUNTS, SIZE_TARGETS, l3_reachable, prefix_of


@pytest.mark.parametrize("scenario", SCENARIOS)
@pytest.mark.parametrize("size", SIZES)
def test_node_counts_frozen_and_within_band(scenario, size):
    t = healthy(scenario, size)
    assert t.node_count() == NODE_COUNTS[(scenario, size)]
    target = SIZE_TARGETS[size]
    assert 0.7 * target <= t.node_count() <= 1.3 * target


def test_large_clos_has_redundant_spines():
    t = build_scenario("clos_bgp", "large", 7)
    spines = [n for n in t.devices if n.startswith("spine_router_")]
    assert len(spines) >= 2
    assert 0.7 * 101 <= t.node_count() <= 1.3 * 101


def test_same_inputs_give_byte_identical_json():
    assert build_scenario("isp_static", "small", 0).to_json() == build_scenario("isp_static", "small", 0).to_json()


@pytest.mark.parametrize("scenario", SCENARIOS)
def test_json_round_trip(scenario):
    t = healthy(scenario, "medium")
    assert Topology.from_json(t.to_json()).to_json() == t.to_json()


def test_unsupported_combination_rejected():
    with pytest.raises(ValueError):
        build_scenario("sdn_fabric", "small", 0)
    with pytest.raises(ValueError):
        build_scenario("clos_bgp", "huge", 0)
    with pytest.raises(ValueError):
        build_scenario("clos_bgp", "small", -1)


@pytest.mark.parametrize("scenario", SCENARIOS)
@pytest.mark.parametrize("size", SIZES)
def test_structural_invariants(scenario, size):
    t = healthy(scenario, size)
    validate(t)
    for d in t.devices.values():
        for i in d.interfaces:
            if i.admin_state == "down":
                assert i.oper_state == "down"
    for link in t.links:
        assert link.loss_percent == 0


def test_campus_small_seed3_all_pairs_clean_and_graph_connected():
    t = build_scenario("campus_ospf_service", "small", 3)
    entries = get_reachability(t)
    assert entries and all(e.status == "ok" and e.loss_percent == 0 for e in entries)
    for e in entries:
        assert l3_reachable(t, e.source, e.destination)


@pytest.mark.parametrize("scenario", SCENARIOS)
def test_healthy_hosts_route_to_every_endpoint_prefix(scenario):
    t = healthy(scenario, "medium")
    ribs = converge(t)
    for h in t.hosts():
        for name, entry in t.manifest.items():
            if name != h.name:
                assert ribs[h.name].lookup(entry["ip"]) is not None


def test_clos_small_leaves_learn_each_other_via_spines():
    t = healthy("clos_bgp", "small")
    ribs = converge(t)
    leaves = sorted(n for n in t.devices if n.startswith("leaf_router_"))
    access = {n: {prefix_of(i.addr) for i in t.devices[n].interfaces if i.addr and i.addr.startswith("10.") and
                  prefix_of(i.addr) in {prefix_of(e["ip"] + "/24") for e in t.manifest.values()}}
              for n in leaves}
    for a in leaves:
        for b in leaves:
            if a == b:
                continue
            for prefix in access[b]:
                routes = [e for e in ribs[a].entries if e.prefix == prefix]
                assert routes and routes[0].origin == "bgp"
                assert routes[0].next_hop_device.startswith("spine_router_")


def _block_bgp(dev):
    for chain in ("input", "forward", "output"):
        dev.acl.chains[chain].insert(0, Rule("drop", "tcp", dport=179))
        dev.acl.chains[chain].insert(0, Rule("drop", "tcp", sport=179))


def test_bgp_drop_on_one_spine_keeps_fabric_reachable():
    t = fresh("clos_bgp", "medium")
    spines = sorted(n for n in t.devices if n.startswith("spine_router_"))
    _block_bgp(t.devices[spines[0]])
    cp = control_plane(t, cache=False)
    for router, sessions in cp.bgp.items():
        for s in sessions:
            if s.peer == spines[0] or router == spines[0]:
                assert not s.established
    assert all(e.status == "ok" for e in get_reachability(t))


def test_dead_ospf_daemon_is_never_a_next_hop():
    t = fresh("campus_ospf_service", "medium")
    victim = "dist_router_1"
    t.devices[victim].routing.ospf.daemon_up = False
    for rib in converge(t).values():
        for e in rib.entries:
            if e.origin == "ospf":
                assert e.next_hop_device != victim


@pytest.mark.parametrize("scenario", SCENARIOS)
def test_convergence_idempotent(scenario):
    t = healthy(scenario, "medium")
    assert converge(t) == converge(t)
    assert control_plane(t, cache=False).ribs == control_plane(t, cache=False).ribs


def test_masking_when_bgp_disabled_on_one_spine():
    t = fresh("clos_bgp", "large")
    spine = sorted(n for n in t.devices if n.startswith("spine_router_"))[-1]
    t.devices[spine].routing.bgp.daemon_up = False
    assert all(e.status == "ok" for e in get_reachability(t))


# -- longest-prefix match ------------------------------------------------------------

_ORIGINS = ("connected", "static", "ospf", "bgp")
_prefixes = st.builds(lambda a, b, plen: f"10.{a}.{b}.0/{plen}", st.integers(0, 3), st.integers(0, 3),
                      st.sampled_from([8, 16, 24]))


@given(st.lists(st.tuples(_prefixes, st.sampled_from(_ORIGINS)), min_size=1, max_size=12),
       st.integers(0, 3), st.integers(0, 3), st.integers(0, 255))
def test_lpm_prefers_longest_then_origin(routes, a, b, c):
    entries = [RibEntry(p, "via", o, "eth0", "10.0.0.1") for p, o in routes]
    rib = Rib("r", list(entries))
    ip = f"10.{a}.{b}.{c}"
    value = sum(int(x) << s for x, s in zip(ip.split("."), (24, 16, 8, 0)))
    matching = []
    for e in entries:
        net, plen = parse_cidr(e.prefix)
        m = (0xFFFFFFFF << (32 - plen)) & 0xFFFFFFFF
        if value & m == net & m:
            matching.append((plen, -_ORIGINS.index(e.origin), e))
    got = rib.lookup(ip)
    if not matching:
        assert got is None
    else:
        best_plen, best_pref, _ = max(matching, key=lambda x: (x[0], x[1]))
        assert parse_cidr(got.prefix)[1] == best_plen
        assert -_ORIGINS.index(got.origin) == best_pref


@given(st.lists(st.tuples(st.sampled_from(["drop", "accept"]), st.sampled_from([None, "tcp", "udp", "icmp"]),
                          st.sampled_from([None, 53, 80, 179])), max_size=8),
       st.sampled_from(["tcp", "udp", "icmp"]), st.sampled_from([None, 53, 80, 179]))
def test_acl_first_match_wins(rules, proto, dport):
    acl = AclRuleset()
    acl.chains["input"] = [Rule(v, p, dport=d) for v, p, d in rules]
    expected = "accept"
    for v, p, d in rules:
        if (p is None or p == proto) and (d is None or d == dport):
            expected = v
            break
    assert acl.verdict("input", proto, dport) == expected


def test_topology_equality_is_structural():
    a = healthy("clos_bgp", "small")
    b = copy.deepcopy(a)
    assert a == b
    b.devices["client_0"].resources.open_sockets += 1
    assert a != b
