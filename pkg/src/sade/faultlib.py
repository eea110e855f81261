"""Fault catalog, injector and injection verifier."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import Callable, Optional

from .netmodel import Topology, build_scenario
from .netmodel.model import (
    Device,
    DnsService,
    Qdisc,
    Rule,
    StaticRoute,
    addr_ip,
    network_of,
    parse_cidr,
    parse_ip,
    in_prefix,
)

# constants shared by injector, verifier and skills
DNS_LATENCY_THRESHOLD_MS = 500
DNS_INJECTED_LATENCY_MS = 800
FLAP_PERIOD = 2
CORRUPT_PERCENT = 30
THROTTLE_KBIT = 64
INCAST_KBIT = 256
APP_DELAY_MS = 1500
APP_DELAY_THRESHOLD_MS = 200
DOS_SOCKETS = 4096
SOCKET_THRESHOLD = 1000
STRESS_PROCESS = "stress-ng --cpu 8 --vm 2"
BOGUS_MAC = "02:de:ad:be:ef:01"
BOGUS_ASN = 64999
WRONG_IP_NET = "10.250"
MALFORMED_RESOLVER = "10.0.0.300"
MALFORMED_RECORD = "10.0.0.999"
SPOOFED_DNS = "10.99.0.53"
BACKBONE_AREA = 0

FAMILY_OF: dict[str, str] = {
    "link_detach": "link",
    "link_down": "link",
    "link_flap": "link",
    "mac_address_conflict": "mac_conflict",
    "host_ip_conflict": "host_ip",
    "host_wrong_ip": "host_ip",
    "host_wrong_gateway": "host_ip",
    "host_wrong_netmask": "host_ip",
    "host_missing_ip": "host_ip",
    "host_incorrect_dns": "host_ip",
    "host_static_arp": "host_ip",
    "arp_acl_block": "acl",
    "icmp_acl_block": "acl",
    "http_acl_block": "acl",
    "dns_port_blocked": "acl",
    "bgp_acl_block": "acl",
    "ospf_acl_block": "acl",
    "link_fragmentation_disabled": "acl",
    "link_bandwidth_throttling": "tc",
    "link_high_packet_corruption": "tc",
    "incast_traffic_network_limitation": "tc",
    "ospf_neighbor_missing": "ospf",
    "frr_service_down": "ospf",
    "ospf_area_misconfiguration": "ospf",
    "bgp_asn_misconfig": "bgp",
    "bgp_missing_route_advertisement": "bgp",
    "bgp_hijacking": "bgp",
    "bgp_blackhole_route_leak": "bgp",
    "host_static_blackhole": "bgp",
    "dhcp_service_down": "dhcp",
    "dhcp_missing_subnet": "dhcp",
    "dhcp_spoofed_subnet": "dhcp",
    "dhcp_spoofed_dns": "dhcp",
    "dns_service_down": "dns",
    "dns_record_error": "dns",
    "dns_lookup_latency": "dns",
    "load_balancer_overload": "load_balancer",
    "sender_resource_contention": "resource_contention",
    "receiver_resource_contention": "resource_contention",
    "sender_application_delay": "resource_contention",
    "web_dos_attack": "resource_contention",
    "host_crash": "host_crash",
}
LABELS: tuple[str, ...] = tuple(FAMILY_OF)
FAMILIES: tuple[str, ...] = (
    "link", "mac_conflict", "host_ip", "acl", "tc", "ospf",
    "bgp", "dhcp", "dns", "load_balancer", "resource_contention", "host_crash",
)


def labels_of(family: str) -> list[str]:
    return [label for label, fam in FAMILY_OF.items() if fam == family]


@dataclass(frozen=True)
class GroundTruth:
    is_anomaly: bool
    labels: frozenset[str] = frozenset()
    devices: frozenset[str] = frozenset()

    def to_dict(self) -> dict:
        return {"is_anomaly": self.is_anomaly, "labels": sorted(self.labels), "devices": sorted(self.devices)}

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        return cls(bool(d["is_anomaly"]), frozenset(d["labels"]), frozenset(d["devices"]))


BENIGN = GroundTruth(False)


@dataclass
class Incident:
    incident_id: str
    topology: Topology
    truth: GroundTruth
    seed: int
    label: Optional[str] = None
    target: Optional[str] = None

    @property
    def scenario(self) -> str:
        return self.topology.scenario

    @property
    def size(self) -> str:
        return self.topology.size_class

    def to_dict(self) -> dict:
        return {
            "incident_id": self.incident_id,
            "scenario": self.scenario,
            "size": self.size,
            "seed": self.seed,
            "label": self.label,
            "target": self.target,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def incident_id(scenario: str, size: str, seed: int, label: Optional[str], target: Optional[str]) -> str:
    if label is None:
        return f"{scenario}-{size}-s{seed}-benign"
    return f"{scenario}-{size}-s{seed}-{label}-{target}"


def incident_from_dict(d: dict) -> Incident:
    """Rebuild an incident from its serialized description (deterministic)."""
    return make_incident(d["scenario"], d["size"], d["seed"], d.get("label"), d.get("target"))


def make_incident(scenario: str, size: str, seed: int, label: Optional[str] = None,
                  target: Optional[str] = None) -> Incident:
    t = build_scenario(scenario, size, seed)
    if label is None:
        return make_benign(t)
    if target is None:
        targets = enumerate_targets(t, label)
        if not targets:
            raise ValueError(f"{label} is not injectable in {scenario}")
        target = targets[seed % len(targets)]
    faulty, truth = inject(t, label, target, seed)
    return Incident(incident_id(scenario, size, seed, label, target), faulty, truth, seed, label, target)


def make_benign(t: Topology) -> Incident:
    return Incident(incident_id(t.scenario, t.size_class, t.seed, None, None), t, BENIGN, t.seed)


# -- targets ---------------------------------------------------------------


def _speaks(dev: Device, proto: str) -> bool:
    return dev.is_router and getattr(dev.routing, proto) is not None


def _same_subnet_peers(t: Topology, dev: Device) -> list[Device]:
    prefix = network_of(dev.access_iface.addr)
    return [d for d in t.endpoints() if d.name != dev.name and network_of(d.access_iface.addr) == prefix]


def _is_leaf(t: Topology, dev: Device) -> bool:
    if not _speaks(dev, "bgp"):
        return False
    return any(_peer_device(t, dev, i.name) and _peer_device(t, dev, i.name).kind == "switch" for i in dev.interfaces)


def _peer_device(t: Topology, dev: Device, iface: str) -> Optional[Device]:
    link = t.link_of(dev.name, iface)
    return t.devices[link.other(dev.name, iface)[0]] if link else None


def _other_subnet_endpoint(t: Topology, dev: Device) -> Optional[Device]:
    own = network_of(dev.access_iface.addr)
    for d in t.endpoints():
        if d.kind != "host" and network_of(d.access_iface.addr) != own:
            return d
    return None


_TARGETS: dict[str, Callable[[Topology, Device], bool]] = {
    "link_detach": lambda t, d: d.kind == "host",
    "link_down": lambda t, d: d.kind == "host",
    "link_flap": lambda t, d: d.kind == "host",
    "mac_address_conflict": lambda t, d: d.kind == "host",
    "host_ip_conflict": lambda t, d: d.kind == "host" and bool(_same_subnet_peers(t, d)),
    "host_wrong_ip": lambda t, d: d.kind == "host",
    "host_wrong_gateway": lambda t, d: d.kind == "host",
    "host_wrong_netmask": lambda t, d: d.kind == "host",
    "host_missing_ip": lambda t, d: d.kind == "host",
    "host_incorrect_dns": lambda t, d: d.kind == "host",
    "host_static_arp": lambda t, d: d.kind == "host",
    "arp_acl_block": lambda t, d: d.kind == "host",
    "icmp_acl_block": lambda t, d: d.is_router,
    "http_acl_block": lambda t, d: d.kind == "web_server",
    "dns_port_blocked": lambda t, d: d.services.dns is not None,
    "bgp_acl_block": lambda t, d: _speaks(d, "bgp"),
    "ospf_acl_block": lambda t, d: _speaks(d, "ospf"),
    "link_fragmentation_disabled": lambda t, d: d.is_router,
    "link_bandwidth_throttling": lambda t, d: d.kind == "host",
    "link_high_packet_corruption": lambda t, d: d.kind == "host",
    "incast_traffic_network_limitation": lambda t, d: d.kind == "web_server",
    "ospf_neighbor_missing": lambda t, d: _speaks(d, "ospf"),
    "frr_service_down": lambda t, d: _speaks(d, "ospf") or _speaks(d, "bgp"),
    "ospf_area_misconfiguration": lambda t, d: _speaks(d, "ospf"),
    "bgp_asn_misconfig": _is_leaf,
    "bgp_missing_route_advertisement": _is_leaf,
    "bgp_hijacking": _is_leaf,
    "bgp_blackhole_route_leak": _is_leaf,
    "host_static_blackhole": lambda t, d: d.kind == "host" and _other_subnet_endpoint(t, d) is not None,
    "dhcp_service_down": lambda t, d: d.services.dhcp is not None,
    "dhcp_missing_subnet": lambda t, d: d.services.dhcp is not None,
    "dhcp_spoofed_subnet": lambda t, d: d.services.dhcp is not None,
    "dhcp_spoofed_dns": lambda t, d: d.services.dhcp is not None,
    "dns_service_down": lambda t, d: d.services.dns is not None,
    "dns_record_error": lambda t, d: d.services.dns is not None,
    "dns_lookup_latency": lambda t, d: d.services.dns is not None,
    "load_balancer_overload": lambda t, d: d.services.lb is not None,
    "sender_resource_contention": lambda t, d: d.kind == "host",
    "receiver_resource_contention": lambda t, d: d.kind == "web_server",
    "sender_application_delay": lambda t, d: d.kind == "host",
    "web_dos_attack": lambda t, d: d.kind == "web_server",
    "host_crash": lambda t, d: d.kind == "host",
}


def _check_label(label: str) -> None:
    if label not in FAMILY_OF:
        raise ValueError(f"unknown fault label {label!r}")


def enumerate_targets(t: Topology, label: str) -> list[str]:
    """Every device on which ``label`` can be injected, sorted by name."""
    _check_label(label)
    pred = _TARGETS[label]
    return [name for name in sorted(t.devices) if pred(t, t.devices[name])]


# -- injection -------------------------------------------------------------


def _drop(dev: Device, chains: tuple[str, ...], **match) -> None:
    for chain in chains:
        dev.acl.chains.setdefault(chain, []).append(Rule(verdict="drop", **match))


def _router_ifaces(t: Topology, dev: Device) -> list[str]:
    out = []
    for i in dev.interfaces:
        peer = _peer_device(t, dev, i.name)
        if peer is not None and peer.is_router:
            out.append(i.name)
    return out


def _victim_subnet(t: Topology, dev: Device, seed: int) -> str:
    """Half of another leaf's access subnet, as a /25."""
    own = {network_of(i.addr) for i in dev.interfaces if i.addr}
    others = sorted(
        p for r in t.routers() if r.name != dev.name and r.routing.bgp
        for p in r.routing.bgp.advertised if p not in own
    )
    base = others[seed % len(others)]
    return base.replace("/24", "/25")


def _mutate(t: Topology, label: str, dev: Device, seed: int) -> None:
    iface = dev.access_iface
    if label in ("link_detach", "link_down", "link_flap"):
        link = t.link_of(dev.name, iface.name)
        link.state = {"link_detach": "detached", "link_down": "down", "link_flap": "flapping"}[label]
        if label == "link_flap":
            link.period = FLAP_PERIOD
    elif label == "mac_address_conflict":
        peers = _same_subnet_peers(t, dev)
        if peers:
            iface.mac = peers[seed % len(peers)].access_iface.mac
        else:
            gw = dev.host_net.default_gateway
            owner = next(i for r in t.routers() for i in r.interfaces if addr_ip(i.addr) == gw)
            iface.mac = owner.mac
    elif label == "host_ip_conflict":
        peers = _same_subnet_peers(t, dev)
        iface.addr = peers[seed % len(peers)].access_iface.addr
    elif label == "host_wrong_ip":
        ip, _ = parse_cidr(iface.addr)
        iface.addr = f"{WRONG_IP_NET}.{(ip >> 16) & 0xFF}.{ip & 0xFF}/24"
    elif label == "host_wrong_gateway":
        dev.host_net.default_gateway = network_of(iface.addr).rsplit(".", 1)[0] + ".254"
    elif label == "host_wrong_netmask":
        iface.addr = addr_ip(iface.addr) + "/29"
    elif label == "host_missing_ip":
        iface.addr = None
    elif label == "host_incorrect_dns":
        dev.host_net.resolvers = [MALFORMED_RESOLVER]
    elif label == "host_static_arp":
        from .netmodel.model import ArpEntry
        dev.host_net.arp_cache.append(ArpEntry(ip=dev.host_net.default_gateway, mac=BOGUS_MAC))
    elif label == "arp_acl_block":
        _drop(dev, ("input",), proto="arp")
    elif label == "icmp_acl_block":
        _drop(dev, ("input", "forward"), proto="icmp", icmp_type="echo-request")
    elif label == "http_acl_block":
        _drop(dev, ("input",), proto="tcp", dport=80)
    elif label == "dns_port_blocked":
        _drop(dev, ("input",), proto="udp", dport=53)
        _drop(dev, ("input",), proto="tcp", dport=53)
    elif label == "bgp_acl_block":
        _drop(dev, ("input", "forward", "output"), proto="tcp", dport=179)
        _drop(dev, ("input", "forward", "output"), proto="tcp", sport=179)
    elif label == "ospf_acl_block":
        _drop(dev, ("input", "output"), proto="ospf")
    elif label == "link_fragmentation_disabled":
        dev.acl.frag_drop = True
    elif label == "link_bandwidth_throttling":
        iface.qdisc = Qdisc("rate_limit", THROTTLE_KBIT)
    elif label == "link_high_packet_corruption":
        iface.qdisc = Qdisc("corrupt", CORRUPT_PERCENT)
    elif label == "incast_traffic_network_limitation":
        iface.qdisc = Qdisc("rate_limit", INCAST_KBIT)
    elif label == "ospf_neighbor_missing":
        for name in _router_ifaces(t, dev):
            dev.routing.ospf.areas.pop(name, None)
    elif label == "ospf_area_misconfiguration":
        names = _router_ifaces(t, dev)
        dev.routing.ospf.areas[names[seed % len(names)]] = 1
    elif label == "frr_service_down":
        for proto in (dev.routing.ospf, dev.routing.bgp):
            if proto is not None:
                proto.daemon_up = False
    elif label == "bgp_asn_misconfig":
        dev.routing.bgp.local_asn = BOGUS_ASN
    elif label == "bgp_missing_route_advertisement":
        dev.routing.bgp.advertised = []
    elif label == "bgp_hijacking":
        dev.routing.bgp.advertised.append(_victim_subnet(t, dev, seed))
    elif label == "bgp_blackhole_route_leak":
        prefix = _victim_subnet(t, dev, seed)
        dev.routing.static_routes.append(StaticRoute(prefix=prefix, blackhole=True))
        dev.routing.bgp.advertised.append(prefix)
    elif label == "host_static_blackhole":
        other = _other_subnet_endpoint(t, dev)
        dev.routing.static_routes.append(StaticRoute(prefix=network_of(other.access_iface.addr), blackhole=True))
    elif label == "dhcp_service_down":
        dev.services.dhcp.daemon_up = False
    elif label == "dhcp_missing_subnet":
        subnets = dev.services.dhcp.subnets
        subnets.pop(seed % len(subnets))
    elif label == "dhcp_spoofed_subnet":
        subnets = dev.services.dhcp.subnets
        entry = subnets[seed % len(subnets)]
        entry.gateway = entry.prefix.rsplit(".", 1)[0] + ".254"
    elif label == "dhcp_spoofed_dns":
        subnets = dev.services.dhcp.subnets
        subnets[seed % len(subnets)].dns = SPOOFED_DNS
    elif label == "dns_service_down":
        dev.services.dns.daemon_up = False
    elif label == "dns_record_error":
        zone = dev.services.dns.zone
        names = sorted(n for n in zone if t.devices[n].kind == "web_server")
        zone[names[seed % len(names)]] = MALFORMED_RECORD
    elif label == "dns_lookup_latency":
        dev.services.dns.lookup_latency_ms = DNS_INJECTED_LATENCY_MS
    elif label == "load_balancer_overload":
        dev.services.lb.overloaded = True
    elif label in ("sender_resource_contention", "receiver_resource_contention"):
        dev.resources.stress_processes.append(STRESS_PROCESS)
        dev.resources.cpu_load = 0.97
    elif label == "sender_application_delay":
        dev.resources.app_delay_ms = APP_DELAY_MS
    elif label == "web_dos_attack":
        dev.resources.open_sockets = DOS_SOCKETS
        dev.resources.cpu_load = 0.92
    elif label == "host_crash":
        dev.crashed = True
        for i in dev.interfaces:
            i.oper_state = "down"
    else:  # pragma: no cover - guarded by _check_label
        raise ValueError(label)


def inject(t: Topology, label: str, target: str, seed: int = 0) -> tuple[Topology, GroundTruth]:
    """Return a mutated copy of ``t`` carrying the canonical fault; ``t`` is untouched."""
    _check_label(label)
    if target not in t.devices:
        raise ValueError(f"unknown target {target!r}")
    if target not in enumerate_targets(t, label):
        raise ValueError(f"{label} cannot be injected on {target} in {t.scenario}")
    out = copy.deepcopy(t)
    _mutate(out, label, out.devices[target], seed)
    return out, GroundTruth(True, frozenset({label}), frozenset({target}))


# -- verification ----------------------------------------------------------
# Predicates read only the mutated topology and its published manifest; they
# share no code with _mutate.


@dataclass(frozen=True)
class Verdict:
    verified: bool
    reason: str = ""

    def __str__(self) -> str:
        return "verified" if self.verified else f"not_manifest({self.reason})"


def _link_state(t: Topology, d: Device, state: str) -> bool:
    return any(
        (l.a[0] == d.name or l.b[0] == d.name) and l.state == state for l in t.links
    )


def _all_macs(t: Topology) -> dict[str, list[tuple[str, str]]]:
    out: dict[str, list[tuple[str, str]]] = {}
    for dev in t.devices.values():
        for i in dev.interfaces:
            out.setdefault(i.mac.lower(), []).append((dev.name, i.name))
    return out


def _addr_of(d: Device) -> Optional[str]:
    return d.interfaces[0].addr if d.interfaces else None


def _manifest_ip(t: Topology, d: Device) -> Optional[str]:
    return t.manifest.get(d.name, {}).get("ip")


def _router_ips(t: Topology) -> set[str]:
    return {addr_ip(i.addr) for r in t.routers() for i in r.interfaces if i.addr}


def _dns_ips(t: Topology) -> set[str]:
    return {d.services.dns.listen_ip for d in t.devices.values() if d.services.dns}


def _has_rule(d: Device, proto: str, port: Optional[int] = None) -> bool:
    for _, r in d.acl.rules():
        if r.verdict == "drop" and r.proto == proto and (port is None or port in (r.dport, r.sport)):
            return True
    return False


def _access_prefixes(t: Topology) -> set[str]:
    return {network_of(e["ip"] + "/24") for e in t.manifest.values()}


def _ospf_link_peers(t: Topology, d: Device) -> list[tuple[str, Device, str]]:
    out = []
    for l in t.links:
        for (x, xi), (y, yi) in ((tuple(l.a), tuple(l.b)), (tuple(l.b), tuple(l.a))):
            if x == d.name and t.devices[y].routing.ospf is not None:
                out.append((xi, t.devices[y], yi))
    return out


def _p_ip_conflict(t, d):
    ip = addr_ip(_addr_of(d))
    return ip is not None and any(
        o.name != d.name and addr_ip(_addr_of(o)) == ip for o in t.endpoints()
    )


def _p_wrong_ip(t, d):
    ip = addr_ip(_addr_of(d))
    return ip is not None and ip != _manifest_ip(t, d) and not _p_ip_conflict(t, d)


def _p_wrong_gateway(t, d):
    gw = d.host_net.default_gateway
    return gw is not None and gw not in _router_ips(t)


def _p_wrong_netmask(t, d):
    addr = _addr_of(d)
    gw = d.host_net.default_gateway
    return addr is not None and gw is not None and addr_ip(addr) == _manifest_ip(t, d) \
        and not in_prefix(parse_ip(gw), network_of(addr))


def _p_static_arp(t, d):
    real = {}
    for dev in t.devices.values():
        for i in dev.interfaces:
            if i.addr:
                real.setdefault(addr_ip(i.addr), set()).add(i.mac)
    return any(a.static and a.mac not in real.get(a.ip, set()) for a in d.host_net.arp_cache)


def _p_bgp_asn(t, d):
    if d.routing.bgp is None:
        return False
    mine = {addr_ip(i.addr) for i in d.interfaces if i.addr}
    for r in t.routers():
        for n in (r.routing.bgp.neighbors if r.routing.bgp else []):
            if n.peer_ip in mine and n.remote_asn != d.routing.bgp.local_asn:
                return True
    return False


def _p_missing_adv(t, d):
    bgp = d.routing.bgp
    if bgp is None:
        return False
    served = {network_of(i.addr) for i in d.interfaces if i.addr} & _access_prefixes(t)
    return bool(served - set(bgp.advertised))


def _foreign_adverts(d: Device) -> list[str]:
    own = [network_of(i.addr) for i in d.interfaces if i.addr]
    return [p for p in d.routing.bgp.advertised if p not in own] if d.routing.bgp else []


def _blackholed(d: Device) -> set[str]:
    return {s.prefix for s in d.routing.static_routes if s.blackhole}


def _p_hijack(t, d):
    return any(p not in _blackholed(d) for p in _foreign_adverts(d))


def _p_leak(t, d):
    return any(p in _blackholed(d) for p in _foreign_adverts(d))


def _p_dhcp_missing(t, d):
    dhcp = d.services.dhcp
    if dhcp is None:
        return False
    covered = {s.prefix for s in dhcp.subnets}
    return bool({network_of(t.manifest[h.name]["ip"] + "/24") for h in t.hosts()} - covered)


def _p_dhcp_spoof_gw(t, d):
    dhcp = d.services.dhcp
    return dhcp is not None and any(s.gateway not in _router_ips(t) for s in dhcp.subnets)


def _p_dhcp_spoof_dns(t, d):
    dhcp = d.services.dhcp
    return dhcp is not None and any(s.dns not in _dns_ips(t) for s in dhcp.subnets)


def _p_record(t, d):
    dns: Optional[DnsService] = d.services.dns
    if dns is None:
        return False
    return any(t.manifest.get(name, {}).get("ip") != value for name, value in dns.zone.items())


def _p_qdisc(kind: str, dev_kinds: tuple[str, ...]):
    return lambda t, d: d.kind in dev_kinds and any(i.qdisc.kind == kind for i in d.interfaces)


_PREDICATES: dict[str, Callable[[Topology, Device], bool]] = {
    "link_detach": lambda t, d: _link_state(t, d, "detached"),
    "link_down": lambda t, d: _link_state(t, d, "down"),
    "link_flap": lambda t, d: _link_state(t, d, "flapping"),
    "mac_address_conflict": lambda t, d: any(len(_all_macs(t)[i.mac.lower()]) > 1 for i in d.interfaces)
    and any(i.mac != t.manifest.get(d.name, {}).get("mac") for i in d.interfaces[:1]),
    "host_ip_conflict": _p_ip_conflict,
    "host_wrong_ip": _p_wrong_ip,
    "host_wrong_gateway": _p_wrong_gateway,
    "host_wrong_netmask": _p_wrong_netmask,
    "host_missing_ip": lambda t, d: d.kind in ("host",) and bool(d.interfaces) and d.interfaces[0].addr is None,
    "host_incorrect_dns": lambda t, d: d.is_endpoint and any(r not in _dns_ips(t) for r in d.host_net.resolvers),
    "host_static_arp": _p_static_arp,
    "arp_acl_block": lambda t, d: _has_rule(d, "arp"),
    "icmp_acl_block": lambda t, d: _has_rule(d, "icmp"),
    "http_acl_block": lambda t, d: _has_rule(d, "tcp", 80),
    "dns_port_blocked": lambda t, d: _has_rule(d, "udp", 53) or _has_rule(d, "tcp", 53),
    "bgp_acl_block": lambda t, d: _has_rule(d, "tcp", 179),
    "ospf_acl_block": lambda t, d: _has_rule(d, "ospf"),
    "link_fragmentation_disabled": lambda t, d: d.acl.frag_drop,
    "link_bandwidth_throttling": _p_qdisc("rate_limit", ("host",)),
    "link_high_packet_corruption": _p_qdisc("corrupt", ("host", "router")),
    "incast_traffic_network_limitation": _p_qdisc("rate_limit", ("web_server", "load_balancer")),
    "ospf_neighbor_missing": lambda t, d: d.routing.ospf is not None and d.routing.ospf.daemon_up
    and any(xi not in d.routing.ospf.areas for xi, _, _ in _ospf_link_peers(t, d)),
    "frr_service_down": lambda t, d: any(p is not None and not p.daemon_up for p in (d.routing.ospf, d.routing.bgp)),
    "ospf_area_misconfiguration": lambda t, d: d.routing.ospf is not None and any(
        xi in d.routing.ospf.areas and yi in p.routing.ospf.areas
        and d.routing.ospf.areas[xi] != p.routing.ospf.areas[yi] and d.routing.ospf.areas[xi] != BACKBONE_AREA
        for xi, p, yi in _ospf_link_peers(t, d)
    ),
    "bgp_asn_misconfig": _p_bgp_asn,
    "bgp_missing_route_advertisement": _p_missing_adv,
    "bgp_hijacking": _p_hijack,
    "bgp_blackhole_route_leak": _p_leak,
    "host_static_blackhole": lambda t, d: d.kind == "host" and bool(_blackholed(d)),
    "dhcp_service_down": lambda t, d: d.services.dhcp is not None and not d.services.dhcp.daemon_up,
    "dhcp_missing_subnet": _p_dhcp_missing,
    "dhcp_spoofed_subnet": _p_dhcp_spoof_gw,
    "dhcp_spoofed_dns": _p_dhcp_spoof_dns,
    "dns_service_down": lambda t, d: d.services.dns is not None and not d.services.dns.daemon_up,
    "dns_record_error": _p_record,
    "dns_lookup_latency": lambda t, d: d.services.dns is not None
    and d.services.dns.lookup_latency_ms > DNS_LATENCY_THRESHOLD_MS,
    "load_balancer_overload": lambda t, d: d.services.lb is not None and d.services.lb.overloaded,
    "sender_resource_contention": lambda t, d: d.kind == "host" and bool(d.resources.stress_processes),
    "receiver_resource_contention": lambda t, d: d.kind == "web_server" and bool(d.resources.stress_processes),
    "sender_application_delay": lambda t, d: d.resources.app_delay_ms > APP_DELAY_THRESHOLD_MS,
    "web_dos_attack": lambda t, d: d.resources.open_sockets > SOCKET_THRESHOLD,
    "host_crash": lambda t, d: d.crashed,
}

_NOT_MANIFEST_REASON = {
    "link": "all links up",
    "host_crash": "device alive",
}


def manifests(t: Topology, label: str, device: str) -> bool:
    _check_label(label)
    dev = t.devices.get(device)
    if dev is None:
        return False
    if FAMILY_OF[label] in ("host_ip", "mac_conflict", "link") and not dev.is_endpoint:
        return False
    return bool(_PREDICATES[label](t, dev))


def verify_injection(t: Topology, truth: GroundTruth) -> Verdict:
    """Check that every claimed label manifests on a claimed device."""
    if not truth.is_anomaly:
        fired = manifested(t)
        return Verdict(not fired, "" if not fired else f"fault present: {fired[0]}")
    for label in sorted(truth.labels):
        if not any(manifests(t, label, d) for d in truth.devices):
            reason = _NOT_MANIFEST_REASON.get(FAMILY_OF[label], f"{label} predicate does not hold")
            return Verdict(False, reason)
    return Verdict(True)


def manifested(t: Topology) -> list[tuple[str, str]]:
    """All (label, device) pairs whose manifestation predicate fires."""
    out = []
    for label in LABELS:
        for name in sorted(t.devices):
            if manifests(t, label, name):
                out.append((label, name))
    return out


def copy_topology(t: Topology) -> Topology:
    return copy.deepcopy(t)


@dataclass
class GridCell:
    scenario: str
    size: str
    label: Optional[str]
    target: Optional[str] = None
    seed: int = 0
    excluded: bool = False
    note: str = ""
    incident: Optional[Incident] = field(default=None, repr=False)
