"""Deterministic scenario generators for the three supported lab classes.

Node counts per (class, size), all switches and endpoints included:

==================== ===== ====== =====
class                small medium large
==================== ===== ====== =====
clos_bgp               11     25    84
campus_ospf_service    11     25    85
isp_static             11     27    99
==================== ===== ====== =====
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Optional

from .model import (
    SCENARIO_CLASSES,
    SIZE_CLASSES,
    AclRuleset,
    BgpConfig,
    BgpNeighbor,
    Device,
    DhcpLease,
    DhcpService,
    DhcpSubnet,
    DnsService,
    HostNetConfig,
    HttpService,
    Interface,
    LbService,
    Link,
    OspfConfig,
    RoutingConfig,
    StaticRoute,
    Topology,
    addr_ip,
    network_of,
    validate,
)

SPINE_ASN = 65000
LEAF_ASN_BASE = 65100

# services take .2-.9 on an access subnet, clients .10 upwards
SERVICE_HOST_BASE = 2
CLIENT_HOST_BASE = 10


@dataclass(frozen=True)
class ClosShape:
    planes: int
    spines_per_plane: int
    leaves: int
    clients_per_leaf: int
    dns_pods: int
    web_servers: int


@dataclass(frozen=True)
class CampusShape:
    cores: int
    dists: int
    access: int
    clients_per_access: int
    dns_pods: int
    web_servers: int


@dataclass(frozen=True)
class IspShape:
    p_routers: int
    pe_routers: int
    clients: int
    dns_pods: int
    web_servers: int


CLOS_SHAPES = {
    "small": ClosShape(1, 2, 2, 1, 1, 1),
    "medium": ClosShape(2, 2, 4, 2, 2, 2),
    "large": ClosShape(2, 3, 24, 1, 2, 3),
}
CAMPUS_SHAPES = {
    "small": CampusShape(1, 1, 2, 1, 1, 1),
    "medium": CampusShape(2, 2, 4, 2, 2, 2),
    "large": CampusShape(2, 6, 24, 1, 2, 2),
}
ISP_SHAPES = {
    "small": IspShape(2, 2, 3, 1, 1),
    "medium": IspShape(4, 6, 9, 1, 1),
    "large": IspShape(10, 24, 36, 2, 3),
}


class _Builder:
    """Accumulates devices, links and addressing for one topology."""

    def __init__(self, scenario: str, size: str, seed: int):
        self.t = Topology(
            scenario_id=f"{scenario}_{size}_{seed}", scenario=scenario, size_class=size, seed=seed
        )
        rng = random.Random(f"{scenario}/{size}/{seed}")
        self.mac_prefix = rng.randrange(0x10, 0xF0)
        self.latency = rng.randrange(3, 20)
        self._mac = 0
        self._p2p = 0
        self.access: dict[str, dict] = {}  # router -> subnet bookkeeping

    def mac(self) -> str:
        self._mac += 1
        n = self._mac
        return f"02:{self.mac_prefix:02x}:00:{(n >> 16) & 0xFF:02x}:{(n >> 8) & 0xFF:02x}:{n & 0xFF:02x}"

    def device(self, name: str, kind: str) -> Device:
        dev = Device(name=name, kind=kind, acl=AclRuleset())
        self.t.devices[name] = dev
        return dev

    def iface(self, dev: Device, addr: Optional[str] = None, bridge: Optional[str] = None) -> Interface:
        iface = Interface(name=f"eth{len(dev.interfaces)}", mac=self.mac(), addr=addr, bridge=bridge)
        dev.interfaces.append(iface)
        return iface

    def link(self, a: Device, ai: Interface, b: Device, bi: Interface) -> None:
        self.t.links.append(Link(a=(a.name, ai.name), b=(b.name, bi.name)))

    def p2p(self, a: Device, b: Device) -> tuple[Interface, Interface]:
        n = self._p2p
        self._p2p += 1
        base = (n * 4) % 256
        third = (n * 4) // 256
        ia = self.iface(a, f"172.16.{third}.{base + 1}/30")
        ib = self.iface(b, f"172.16.{third}.{base + 2}/30")
        self.link(a, ia, b, ib)
        return ia, ib

    def access_subnet(self, router: Device, index: int) -> None:
        """Give ``router`` an access switch and subnet 10.<index>.0.0/24."""
        sw = self.device(f"switch_{index}", "switch")
        rif = self.iface(router, f"10.{index}.0.1/24")
        sif = self.iface(sw, bridge="br0")
        self.link(router, rif, sw, sif)
        self.access[router.name] = {
            "index": index,
            "switch": sw,
            "prefix": f"10.{index}.0.0/24",
            "gateway": f"10.{index}.0.1",
            "next_service": SERVICE_HOST_BASE,
            "next_client": CLIENT_HOST_BASE,
        }

    def attach(self, router: Device, name: str, kind: str) -> Device:
        info = self.access[router.name]
        if kind == "host":
            octet = info["next_client"]
            info["next_client"] += 1
        else:
            octet = info["next_service"]
            info["next_service"] += 1
        ip = f"10.{info['index']}.0.{octet}"
        dev = self.device(name, kind)
        iface = self.iface(dev, f"{ip}/24")
        sw = info["switch"]
        sif = self.iface(sw, bridge="br0")
        self.link(dev, iface, sw, sif)
        dev.host_net.default_gateway = info["gateway"]
        self.t.manifest[name] = {"ip": ip, "mac": iface.mac}
        if kind == "dns_pod":
            dev.services.dns = DnsService(listen_ip=ip, lookup_latency_ms=self.latency)
        elif kind == "web_server":
            dev.services.http = HttpService()
        elif kind == "dhcp_server":
            dev.services.dhcp = DhcpService()
        elif kind == "load_balancer":
            dev.services.lb = LbService()
            dev.services.http = HttpService()
        return dev

    def finish_services(self, dhcp: bool = False) -> Topology:
        t = self.t
        pods = t.by_kind("dns_pod")
        zone = {name: entry["ip"] for name, entry in sorted(t.manifest.items())}
        for pod in pods:
            pod.services.dns.zone = dict(zone)
        pod_ips = [t.manifest[p.name]["ip"] for p in pods]
        for i, dev in enumerate(t.endpoints()):
            if dev.kind == "dns_pod":
                dev.host_net.resolvers = [t.manifest[dev.name]["ip"]]
            else:
                # rotate primaries; remaining pods act as fallbacks
                k = i % len(pod_ips)
                dev.host_net.resolvers = pod_ips[k:] + pod_ips[:k]
        web = [d.name for d in t.by_kind("web_server")]
        for lb in t.by_kind("load_balancer"):
            lb.services.lb.backends = list(web)
        if dhcp:
            server = t.by_kind("dhcp_server")[0]
            subnets = []
            for router, info in sorted(self.access.items()):
                subnets.append(DhcpSubnet(prefix=info["prefix"], gateway=info["gateway"], dns=pod_ips[0]))
            server.services.dhcp.subnets = subnets
            for host in t.hosts():
                iface = host.access_iface
                host.host_net.dhcp_lease = DhcpLease(
                    ip=addr_ip(iface.addr),
                    gateway=host.host_net.default_gateway,
                    dns=host.host_net.resolvers[0],
                    subnet=network_of(iface.addr),
                )
        validate(t)
        return t


def _place_endpoints(b: _Builder, edge: list[Device], clients_per: int, dns: int, web: int,
                     lb: bool = False, dhcp: bool = False) -> None:
    n = 0
    for r in edge:
        for _ in range(clients_per):
            b.attach(r, f"client_{n}", "host")
            n += 1
    services = [(f"dns_pod{i + 1}", "dns_pod") for i in range(dns)]
    services += [(f"web_server{i + 1}", "web_server") for i in range(web)]
    if lb:
        services.append(("load_balancer", "load_balancer"))
    if dhcp:
        services.append(("dhcp_server1", "dhcp_server"))
    for i, (name, kind) in enumerate(services):
        b.attach(edge[i % len(edge)], name, kind)


def _build_clos(size: str, seed: int) -> Topology:
    shape = CLOS_SHAPES[size]
    b = _Builder("clos_bgp", size, seed)
    spines = [
        b.device(f"spine_router_{p}_{s}", "router")
        for p in range(1, shape.planes + 1)
        for s in range(1, shape.spines_per_plane + 1)
    ]
    leaves = [b.device(f"leaf_router_{k}", "router") for k in range(1, shape.leaves + 1)]
    for sp in spines:
        sp.routing.bgp = BgpConfig(local_asn=SPINE_ASN)
    for k, leaf in enumerate(leaves, start=1):
        leaf.routing.bgp = BgpConfig(local_asn=LEAF_ASN_BASE + k)
    for leaf in leaves:
        for sp in spines:
            li, si = b.p2p(leaf, sp)
            leaf.routing.bgp.neighbors.append(BgpNeighbor(addr_ip(si.addr), SPINE_ASN))
            sp.routing.bgp.neighbors.append(BgpNeighbor(addr_ip(li.addr), leaf.routing.bgp.local_asn))
    for k, leaf in enumerate(leaves, start=1):
        b.access_subnet(leaf, k)
        leaf.routing.bgp.advertised = [b.access[leaf.name]["prefix"]]
    _place_endpoints(b, leaves, shape.clients_per_leaf, shape.dns_pods, shape.web_servers, lb=True)
    return b.finish_services()


def _build_campus(size: str, seed: int) -> Topology:
    shape = CAMPUS_SHAPES[size]
    b = _Builder("campus_ospf_service", size, seed)
    cores = [b.device(f"core_router_{i}", "router") for i in range(1, shape.cores + 1)]
    dists = [b.device(f"dist_router_{i}", "router") for i in range(1, shape.dists + 1)]
    access = [b.device(f"access_router_{i}", "router") for i in range(1, shape.access + 1)]
    for r in cores + dists + access:
        r.routing.ospf = OspfConfig()
    for d in dists:
        for c in cores:
            b.p2p(d, c)
    pairs = max(1, len(dists) // 2)
    for j, a in enumerate(access):
        pair = j % pairs
        uplinks = dists[2 * pair: 2 * pair + 2] if len(dists) > 1 else dists
        for d in uplinks:
            b.p2p(a, d)
    for j, a in enumerate(access, start=1):
        b.access_subnet(a, j)
    for r in cores + dists + access:
        for iface in r.interfaces:
            r.routing.ospf.areas[iface.name] = 0
            r.routing.ospf.advertised.append(network_of(iface.addr))
    _place_endpoints(b, access, shape.clients_per_access, shape.dns_pods, shape.web_servers, dhcp=True)
    return b.finish_services(dhcp=True)


def _shortest_first_hops(adj: dict[str, list[str]], src: str) -> dict[str, str]:
    """BFS from ``src``; returns destination -> first hop (ties by name)."""
    first: dict[str, str] = {}
    frontier = [src]
    seen = {src}
    while frontier:
        nxt = []
        for node in frontier:
            for nb in sorted(adj[node]):
                if nb in seen:
                    continue
                seen.add(nb)
                first[nb] = nb if node == src else first[node]
                nxt.append(nb)
        frontier = nxt
    return first


def _build_isp(size: str, seed: int) -> Topology:
    shape = ISP_SHAPES[size]
    b = _Builder("isp_static", size, seed)
    ps = [b.device(f"p_router_{i}", "router") for i in range(1, shape.p_routers + 1)]
    pes = [b.device(f"pe_router_{i}", "router") for i in range(1, shape.pe_routers + 1)]
    adj: dict[str, list[str]] = {r.name: [] for r in ps + pes}
    peer_ip: dict[tuple[str, str], str] = {}

    def connect(x: Device, y: Device) -> None:
        ix, iy = b.p2p(x, y)
        adj[x.name].append(y.name)
        adj[y.name].append(x.name)
        peer_ip[(x.name, y.name)] = addr_ip(iy.addr)
        peer_ip[(y.name, x.name)] = addr_ip(ix.addr)

    n = len(ps)
    if n == 2:
        connect(ps[0], ps[1])
    else:
        for i in range(n):
            connect(ps[i], ps[(i + 1) % n])
        for i in range(0, n // 2, 2):
            connect(ps[i], ps[i + n // 2])
    for j, pe in enumerate(pes):
        connect(pe, ps[j % n])
    for j, pe in enumerate(pes, start=1):
        b.access_subnet(pe, j)
    per_pe = [shape.clients // len(pes) + (1 if i < shape.clients % len(pes) else 0) for i in range(len(pes))]
    n_client = 0
    for pe, count in zip(pes, per_pe):
        for _ in range(count):
            b.attach(pe, f"client_{n_client}", "host")
            n_client += 1
    services = [(f"dns_pod{i + 1}", "dns_pod") for i in range(shape.dns_pods)]
    services += [(f"web_server{i + 1}", "web_server") for i in range(shape.web_servers)]
    for i, (name, kind) in enumerate(services):
        b.attach(pes[(i + 1) % len(pes)], name, kind)
    routers = ps + pes
    owned = {r.name: sorted({network_of(i.addr) for i in r.interfaces}) for r in routers}
    for r in routers:
        hops = _shortest_first_hops(adj, r.name)
        local = set(owned[r.name])
        for dst in sorted(hops):
            for prefix in owned[dst]:
                if prefix in local:
                    continue
                local.add(prefix)
                r.routing.static_routes.append(StaticRoute(prefix=prefix, next_hop=peer_ip[(r.name, hops[dst])]))
    return b.finish_services()


_BUILDERS = {
    "clos_bgp": _build_clos,
    "campus_ospf_service": _build_campus,
    "isp_static": _build_isp,
}


def build_scenario(scenario: str, size: str, seed: int) -> Topology:
    """Build a healthy topology for ``(scenario, size, seed)``."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    if scenario not in SCENARIO_CLASSES or size not in SIZE_CLASSES:
        raise ValueError(f"unsupported scenario/size combination: {scenario}/{size}")
    return _BUILDERS[scenario](size, seed)
