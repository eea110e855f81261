"""Closed-form control-plane convergence.

Derives effective forwarding state from configuration: L2 segments, OSPF
adjacencies, BGP sessions and per-device RIBs. Results are cached per
topology object and clock tick; topologies are treated as immutable once
built or injected.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass, field
from typing import Optional

from .model import AclRuleset, Device, Link, Topology, addr_ip, mask, network_of, parse_cidr, parse_ip

ORIGIN_PREFERENCE = {"connected": 0, "static": 1, "ospf": 2, "bgp": 3}
BGP_PORT = 179


@dataclass(frozen=True)
class RibEntry:
    prefix: str
    kind: str  # local | via | blackhole
    origin: str
    iface: Optional[str] = None
    next_hop_ip: Optional[str] = None
    next_hop_device: Optional[str] = None

    def render(self) -> str:
        if self.kind == "blackhole":
            return f"blackhole {self.prefix} proto {self.origin}"
        if self.kind == "local":
            return f"{self.prefix} dev {self.iface} proto {self.origin} scope link"
        return f"{self.prefix} via {self.next_hop_ip} dev {self.iface} proto {self.origin}"


@dataclass
class Rib:
    device: str
    entries: list[RibEntry] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._index: list[tuple[int, int, RibEntry]] = []
        self._sort()

    def _sort(self) -> None:
        keyed = []
        for e in self.entries:
            net, plen = parse_cidr(e.prefix)
            keyed.append((plen, ORIGIN_PREFERENCE[e.origin], e.prefix, e))
        keyed.sort(key=lambda k: (-k[0], k[1], k[2]))
        self.entries = [k[3] for k in keyed]
        self._index = [(parse_cidr(e.prefix)[0] & mask(k[0]), mask(k[0]), e) for k, e in zip(keyed, self.entries)]

    def lookup(self, ip: str | int) -> Optional[RibEntry]:
        """Longest-prefix match, ties broken by origin preference."""
        value = parse_ip(ip) if isinstance(ip, str) else ip
        if value is None:
            return None
        for net, m, entry in self._index:
            if value & m == net:
                return entry
        return None

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Rib) and self.device == other.device and self.entries == other.entries


@dataclass(frozen=True)
class OspfAdjacency:
    router: str
    iface: str
    neighbor: str
    neighbor_iface: str
    state: str  # Full | down
    reason: str = ""


@dataclass(frozen=True)
class BgpSession:
    router: str
    peer_ip: str
    peer: Optional[str]
    remote_asn: int
    established: bool
    reason: str = ""


@dataclass
class ControlPlane:
    ribs: dict[str, Rib]
    ospf: dict[str, list[OspfAdjacency]]
    bgp: dict[str, list[BgpSession]]
    segments: "Segments"


class Segments:
    """L2 broadcast domains over up links; switches bridge all their ports."""

    def __init__(self, t: Topology, tick: int):
        self.t = t
        self.tick = tick
        self._seg: dict[tuple[str, str], int] = {}
        self.members: dict[int, list[tuple[str, str]]] = {}
        self._links: dict[tuple[str, str], Link] = {}
        # addresses are fixed for the lifetime of a snapshot
        self._by_ip: dict[int, dict[Optional[str], list[tuple[str, str]]]] = {}
        for link in t.links:
            self._links.setdefault(tuple(link.a), link)
            self._links.setdefault(tuple(link.b), link)
        self._build()

    def link_at(self, dev: str, iface: str) -> Optional[Link]:
        return self._links.get((dev, iface))

    def iface_up(self, dev: Device, iface_name: str) -> bool:
        if dev.crashed:
            return False
        iface = dev.iface(iface_name)
        if iface.admin_state != "up" or iface.oper_state != "up":
            return False
        link = self._links.get((dev.name, iface_name))
        return link is not None and link.state_at(self.tick) == "up"

    def _build(self) -> None:
        t = self.t
        adj: dict[tuple[str, str], list[tuple[str, str]]] = {}
        for link in t.links:
            a, b = tuple(link.a), tuple(link.b)
            if self.iface_up(t.devices[a[0]], a[1]) and self.iface_up(t.devices[b[0]], b[1]):
                adj.setdefault(a, []).append(b)
                adj.setdefault(b, []).append(a)
        for sw in t.by_kind("switch"):
            ports = [(sw.name, i.name) for i in sw.interfaces if i.bridge and self.iface_up(sw, i.name)]
            for p in ports:
                adj.setdefault(p, []).extend(q for q in ports if q != p)
        seg_id = 0
        for name in sorted(t.devices):
            dev = t.devices[name]
            for iface in dev.interfaces:
                start = (name, iface.name)
                if start in self._seg or not self.iface_up(dev, iface.name):
                    continue
                stack = [start]
                self._seg[start] = seg_id
                members = []
                while stack:
                    node = stack.pop()
                    if t.devices[node[0]].kind != "switch":
                        members.append(node)
                    for nb in adj.get(node, []):
                        if nb not in self._seg:
                            self._seg[nb] = seg_id
                            stack.append(nb)
                self.members[seg_id] = sorted(members)
                seg_id += 1

    def segment_of(self, dev: str, iface: str) -> Optional[int]:
        return self._seg.get((dev, iface))

    def owners(self, dev: str, iface: str, ip: str) -> list[tuple[str, str]]:
        """Interfaces on the same segment as (dev, iface) that hold ``ip``."""
        seg = self._seg.get((dev, iface))
        if seg is None:
            return []
        by_ip = self._by_ip.get(seg)
        if by_ip is None:
            by_ip = self._by_ip[seg] = {}
            for mdev, miface in self.members[seg]:
                by_ip.setdefault(addr_ip(self.t.devices[mdev].iface(miface).addr), []).append((mdev, miface))
        return list(by_ip.get(ip, ()))

    def peers(self, dev: str, iface: str) -> list[tuple[str, str]]:
        seg = self._seg.get((dev, iface))
        if seg is None:
            return []
        return [m for m in self.members[seg] if m != (dev, iface)]


def tcp_allowed(a: AclRuleset, b: AclRuleset, port: int) -> bool:
    """A connection from a to b on ``port`` passes both rulesets, both directions."""
    return (
        a.verdict("output", "tcp", dport=port) == "accept"
        and b.verdict("input", "tcp", dport=port) == "accept"
        and b.verdict("output", "tcp", sport=port) == "accept"
        and a.verdict("input", "tcp", sport=port) == "accept"
    )


def _connected(dev: Device, seg: Segments) -> list[RibEntry]:
    out = []
    for iface in dev.interfaces:
        if iface.addr and seg.iface_up(dev, iface.name):
            out.append(RibEntry(prefix=network_of(iface.addr), kind="local", origin="connected", iface=iface.name))
    return out


def _resolve_next_hop(dev: Device, seg: Segments, connected: list[RibEntry], nh: str) -> Optional[RibEntry]:
    """Find the connected interface for ``nh``; None if it is not on-link."""
    ip = parse_ip(nh)
    if ip is None:
        return None
    for c in connected:
        net, plen = parse_cidr(c.prefix)
        if ip & mask(plen) == net & mask(plen):
            return c
    return None


def _via(prefix: str, origin: str, dev: Device, seg: Segments, connected: list[RibEntry], nh: str) -> Optional[RibEntry]:
    c = _resolve_next_hop(dev, seg, connected, nh)
    if c is None:
        return None
    owners = seg.owners(dev.name, c.iface, nh)
    return RibEntry(
        prefix=prefix,
        kind="via",
        origin=origin,
        iface=c.iface,
        next_hop_ip=nh,
        next_hop_device=owners[0][0] if owners else None,
    )


def _ospf(t: Topology, seg: Segments) -> dict[str, list[OspfAdjacency]]:
    out: dict[str, list[OspfAdjacency]] = {}
    for r in t.routers():
        ospf = r.routing.ospf
        if ospf is None:
            continue
        adjs = []
        for iface in r.interfaces:
            if iface.name not in ospf.areas or not seg.iface_up(r, iface.name):
                continue
            for pdev, piface in seg.peers(r.name, iface.name):
                peer = t.devices[pdev]
                if peer.routing.ospf is None:
                    continue
                pospf = peer.routing.ospf
                reason = ""
                if not ospf.daemon_up or not pospf.daemon_up:
                    reason = "daemon down"
                elif piface not in pospf.areas:
                    reason = "peer interface not in ospf"
                elif pospf.areas[piface] != ospf.areas[iface.name]:
                    reason = f"area mismatch {ospf.areas[iface.name]}/{pospf.areas[piface]}"
                elif r.acl.verdict("input", "ospf") == "drop" or peer.acl.verdict("input", "ospf") == "drop" \
                        or r.acl.verdict("output", "ospf") == "drop" or peer.acl.verdict("output", "ospf") == "drop":
                    reason = "hello timeout"
                adjs.append(OspfAdjacency(r.name, iface.name, pdev, piface, "down" if reason else "Full", reason))
        out[r.name] = adjs
    return out


def _bgp(t: Topology, seg: Segments) -> dict[str, list[BgpSession]]:
    out: dict[str, list[BgpSession]] = {}
    for r in t.routers():
        bgp = r.routing.bgp
        if bgp is None:
            continue
        sessions = []
        for nb in bgp.neighbors:
            owner = None
            for iface in r.interfaces:
                owners = seg.owners(r.name, iface.name, nb.peer_ip)
                if owners:
                    owner = owners[0][0]
                    break
            peer = t.devices.get(owner) if owner else None
            reason = ""
            if not bgp.daemon_up:
                reason = "daemon down"
            elif peer is None:
                reason = "peer unreachable"
            elif peer.routing.bgp is None or not peer.routing.bgp.daemon_up:
                reason = "connection refused"
            elif not (tcp_allowed(r.acl, peer.acl, BGP_PORT) or tcp_allowed(peer.acl, r.acl, BGP_PORT)):
                reason = "connect timeout"
            else:
                pbgp = peer.routing.bgp
                my_ips = {addr_ip(i.addr) for i in r.interfaces if i.addr}
                back = [n for n in pbgp.neighbors if n.peer_ip in my_ips]
                if not back:
                    reason = "peer not configured"
                elif nb.remote_asn != pbgp.local_asn:
                    reason = "sent notification: bad peer AS"
                elif back[0].remote_asn != bgp.local_asn:
                    reason = "received notification: bad peer AS"
            sessions.append(BgpSession(r.name, nb.peer_ip, owner, nb.remote_asn, not reason, reason))
        out[r.name] = sessions
    return out


def _ospf_routes(t: Topology, adjacency: dict[str, list[OspfAdjacency]]) -> dict[str, dict[str, tuple[str, str]]]:
    """Per router: prefix -> (neighbor router, neighbor iface) of the first hop."""
    graph: dict[str, list[tuple[str, str, str]]] = {}
    for r, adjs in adjacency.items():
        graph[r] = sorted((a.neighbor, a.neighbor_iface, a.iface) for a in adjs if a.state == "Full")
    routes: dict[str, dict[str, tuple[str, str]]] = {}
    for src in sorted(graph):
        if not t.devices[src].routing.ospf.daemon_up:
            routes[src] = {}
            continue
        first: dict[str, tuple[str, str]] = {}
        dist = {src: 0}
        frontier = [src]
        while frontier:
            nxt = []
            for node in frontier:
                for nb, nb_iface, _ in graph.get(node, []):
                    if nb in dist:
                        continue
                    dist[nb] = dist[node] + 1
                    first[nb] = (nb, nb_iface) if node == src else first[node]
                    nxt.append(nb)
            frontier = sorted(nxt)
        best: dict[str, tuple[int, str, tuple[str, str]]] = {}
        for dst, hop in first.items():
            for prefix in t.devices[dst].routing.ospf.advertised:
                cand = (dist[dst], dst, hop)
                if prefix not in best or cand[:2] < best[prefix][:2]:
                    best[prefix] = cand
        routes[src] = {p: v[2] for p, v in best.items()}
    return routes


def _bgp_routes(t: Topology, sessions: dict[str, list[BgpSession]]) -> dict[str, dict[str, tuple[str, str]]]:
    """Path-vector propagation; per router: prefix -> (peer device, peer ip)."""
    table: dict[str, dict[str, tuple[tuple[int, ...], str, str]]] = {}
    for r in sessions:
        bgp = t.devices[r].routing.bgp
        table[r] = {p: ((), r, "") for p in bgp.advertised} if bgp.daemon_up else {}
    links = []
    for r, sess in sessions.items():
        for s in sess:
            if s.established:
                links.append((s.peer, r))  # routes flow peer -> r
    changed = True
    while changed:
        changed = False
        for src, dst in sorted(links):
            src_asn = t.devices[src].routing.bgp.local_asn
            dst_asn = t.devices[dst].routing.bgp.local_asn
            src_ip = next(s.peer_ip for s in sessions[dst] if s.peer == src)
            for prefix, (path, _, _) in sorted(table[src].items()):
                new_path = (src_asn,) + path
                if dst_asn in new_path:
                    continue
                cur = table[dst].get(prefix)
                cand = (new_path, src, src_ip)
                if cur is None or (len(new_path), src) < (len(cur[0]), cur[1]):
                    if cur is not None and cur[0] == () and cur[1] == dst:
                        continue  # locally originated always wins
                    if cur != cand:
                        table[dst][prefix] = cand
                        changed = True
    out: dict[str, dict[str, tuple[str, str]]] = {}
    for r, routes in table.items():
        out[r] = {p: (v[1], v[2]) for p, v in routes.items() if v[1] != r}
    return out


# keyed by id(); weak-keyed dicts would compare topologies structurally on lookup
_CACHE: dict[int, dict[int, ControlPlane]] = {}


def _slot(t: Topology) -> dict[int, ControlPlane]:
    key = id(t)
    per = _CACHE.get(key)
    if per is None:
        per = _CACHE[key] = {}
        weakref.finalize(t, _CACHE.pop, key, None)
    return per


def _effective_tick(t: Topology, tick: int) -> int:
    return tick if any(link.state == "flapping" for link in t.links) else 0


def control_plane(t: Topology, tick: int = 0, cache: bool = True) -> ControlPlane:
    """Converged control-plane state at clock ``tick``."""
    tick = _effective_tick(t, tick)
    if cache:
        per = _slot(t)
        if tick in per:
            return per[tick]
    seg = Segments(t, tick)
    ospf = _ospf(t, seg)
    bgp = _bgp(t, seg)
    ospf_routes = _ospf_routes(t, ospf)
    bgp_routes = _bgp_routes(t, bgp)
    ribs: dict[str, Rib] = {}
    for name in sorted(t.devices):
        dev = t.devices[name]
        if dev.kind == "switch":
            ribs[name] = Rib(name)
            continue
        connected = _connected(dev, seg)
        entries = list(connected)
        if dev.host_net.default_gateway:
            e = _via("0.0.0.0/0", "static", dev, seg, connected, dev.host_net.default_gateway)
            if e:
                entries.append(e)
        for sr in dev.routing.static_routes:
            if sr.blackhole:
                entries.append(RibEntry(prefix=sr.prefix, kind="blackhole", origin="static"))
            elif sr.next_hop:
                e = _via(sr.prefix, "static", dev, seg, connected, sr.next_hop)
                if e:
                    entries.append(e)
        for prefix, (nb, nb_iface) in sorted(ospf_routes.get(name, {}).items()):
            nh = addr_ip(t.devices[nb].iface(nb_iface).addr)
            e = _via(prefix, "ospf", dev, seg, connected, nh)
            if e:
                entries.append(e)
        for prefix, (_, peer_ip) in sorted(bgp_routes.get(name, {}).items()):
            e = _via(prefix, "bgp", dev, seg, connected, peer_ip)
            if e:
                entries.append(e)
        ribs[name] = Rib(name, entries)
    cp = ControlPlane(ribs=ribs, ospf=ospf, bgp=bgp, segments=seg)
    if cache:
        per[tick] = cp
    return cp


def converge(t: Topology, tick: int = 0) -> dict[str, Rib]:
    """Map device name -> effective forwarding table."""
    return control_plane(t, tick, cache=False).ribs


def arp_view(t: Topology, device: str, tick: int = 0) -> list[tuple[str, str, bool]]:
    """ARP cache: dynamic entries for RIB next hops plus configured static entries."""
    cp = control_plane(t, tick)
    dev = t.device(device)
    static = {a.ip: a for a in dev.host_net.arp_cache}
    out: dict[str, tuple[str, str, bool]] = {}
    for e in cp.ribs[device].entries:
        if e.kind != "via" or e.next_hop_ip in static or e.next_hop_ip in out:
            continue
        owners = cp.segments.owners(device, e.iface, e.next_hop_ip)
        if owners:
            odev, oif = owners[0]
            out[e.next_hop_ip] = (e.next_hop_ip, t.devices[odev].iface(oif).mac, False)
    for ip, a in static.items():
        out[ip] = (a.ip, a.mac, True)
    return [out[k] for k in sorted(out)]
