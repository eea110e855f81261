"""Evidence surface: all-pairs reachability, per-device probes, tool-call ledger."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Optional

from .netmodel import Topology, control_plane
from .netmodel.converge import ControlPlane, arp_view
from .netmodel.model import Device, addr_ip, network_of, parse_ip

PING_COUNT = 10
MAX_HOPS = 32
OVERSIZE_BYTES = 1500

PROBE_KINDS = (
    "list_ruleset",
    "iface_addr",
    "route_table",
    "route_get",
    "arp_table",
    "resolver_config",
    "ospf_neighbors",
    "ospf_config",
    "bgp_summary",
    "bgp_config",
    "qdisc_state",
    "process_list",
    "socket_list",
    "dhcp_link_log",
    "dns_lookup",
    "http_timing",
    "resource_stats",
)
STATUSES = ("ok", "loss", "timeout", "refused", "unreachable", "unknown")


class ToolCallLedger:
    """Counts every tool call; ``tick`` is the current engine turn.

    One ledger per session; sessions in a process pool each own theirs, so it stays picklable.
    """

    def __init__(self) -> None:
        self.entries: list[tuple[int, str]] = []
        self.tick = 0

    def charge(self, description: str) -> int:
        self.entries.append((self.tick, description))
        return len(self.entries) - 1

    @property
    def count(self) -> int:
        return len(self.entries)


@dataclass
class ReachabilityEntry:
    source: str
    destination: str
    tx: Optional[int]
    rx: Optional[int]
    loss_percent: Optional[float]
    status: str
    dest_ip: Optional[str] = None

    def render(self) -> str:
        if self.status == "unknown":
            return f"{self.source} -> {self.destination} ({self.dest_ip}): status=unknown tx=null rx=null"
        return (
            f"{self.source} -> {self.destination} ({self.dest_ip}): "
            f"tx={self.tx} rx={self.rx} loss={self.loss_percent:g}% status={self.status}"
        )


@dataclass
class ProbeResult:
    kind: str
    device: str
    data: dict[str, Any] = field(default_factory=dict)
    responded: bool = True
    arg: Optional[str] = None

    def render(self) -> str:
        """One line per record."""
        head = f"[{self.device}] {self.kind}" + (f"({self.arg})" if self.arg else "")
        if not self.responded:
            return f"{head}: no response"
        lines = [head]
        for key in sorted(self.data):
            value = self.data[key]
            if isinstance(value, list):
                for item in value:
                    lines.append(f"  {key}: {_flat(item)}")
            else:
                lines.append(f"  {key}: {_flat(value)}")
        return "\n".join(lines)


def _flat(value: Any) -> str:
    if isinstance(value, dict):
        return " ".join(f"{k}={_flat(v)}" for k, v in sorted(value.items()))
    if isinstance(value, (list, tuple)):
        return ",".join(_flat(v) for v in value)
    return str(value)


# -- forwarding ------------------------------------------------------------


@dataclass
class Walk:
    ok: bool
    keep: float = 1.0
    hops: list[str] = field(default_factory=list)
    failed_at: Optional[str] = None
    reason: str = ""
    status: str = "ok"
    delivered_to: Optional[str] = None
    src_ip: Optional[str] = None


def _owns(dev: Device, ip: str) -> bool:
    return any(addr_ip(i.addr) == ip for i in dev.interfaces)


def walk(t: Topology, cp: ControlPlane, src: str, dst_ip: str, proto: str = "icmp",
         dport: Optional[int] = None, sport: Optional[int] = None, size: int = 64) -> Walk:
    """Hop-by-hop forwarding of one packet from ``src`` towards ``dst_ip``."""
    w = Walk(ok=False, hops=[src])

    def fail(at: str, reason: str, status: str = "unreachable") -> Walk:
        w.failed_at, w.reason, w.status = at, reason, status
        return w

    if parse_ip(dst_ip) is None:
        return fail(src, "bad address")
    cur = src
    for _ in range(MAX_HOPS):
        dev = t.devices[cur]
        if dev.crashed:
            return fail(cur, "host down", "timeout")
        if _owns(dev, dst_ip):
            if cur != src and dev.acl.verdict("input", proto, dport, sport) == "drop":
                return fail(cur, f"{proto} filtered on input")
            w.ok, w.delivered_to = True, cur
            if w.src_ip is None:
                w.src_ip = dst_ip
            return w
        chain = "output" if cur == src else "forward"
        if cur != src and not dev.is_router:
            return fail(cur, "not forwarding")
        if dev.acl.verdict(chain, proto, dport, sport) == "drop":
            return fail(cur, f"{proto} filtered on {chain}")
        if size > OVERSIZE_BYTES and dev.acl.frag_drop:
            return fail(cur, "oversize packet dropped", "timeout")
        entry = cp.ribs[cur].lookup(dst_ip)
        if entry is None:
            return fail(cur, "no route")
        if entry.kind == "blackhole":
            return fail(cur, "blackhole route")
        iface = dev.iface(entry.iface)
        if cur == src:
            w.src_ip = addr_ip(iface.addr)
        if iface.qdisc.kind == "corrupt":
            w.keep *= 1 - (iface.qdisc.value or 0) / 100.0
        link = cp.segments.link_at(cur, entry.iface)
        if link is not None and link.loss_percent:
            w.keep *= 1 - link.loss_percent / 100.0
        nh = dst_ip if entry.kind == "local" else entry.next_hop_ip
        owners = cp.segments.owners(cur, entry.iface, nh)
        static = [a for a in dev.host_net.arp_cache if a.ip == nh]
        if static:
            macs = {t.devices[d].iface(i).mac for d, i in owners}
            if static[0].mac not in macs:
                return fail(cur, "static arp entry points nowhere", "timeout")
        elif not owners:
            return fail(cur, "arp incomplete")
        elif dev.acl.verdict("input", "arp") == "drop" or \
                t.devices[owners[0][0]].acl.verdict("input", "arp") == "drop":
            return fail(cur, "arp incomplete")
        if len(owners) > 1:
            w.keep *= 0.5
        cur = owners[0][0]
        w.hops.append(cur)
    return fail(cur, "ttl exceeded")


def _ping(t: Topology, cp: ControlPlane, src: str, dst_ip: str) -> tuple[int, int, str, Walk]:
    fwd = walk(t, cp, src, dst_ip)
    if not fwd.ok:
        return PING_COUNT, 0, fwd.status, fwd
    rev = walk(t, cp, fwd.delivered_to, fwd.src_ip)
    if not rev.ok:
        return PING_COUNT, 0, rev.status, rev
    keep = fwd.keep * rev.keep
    rx = int(PING_COUNT * keep + 0.5)
    status = "ok" if rx == PING_COUNT else ("loss" if rx else "timeout")
    return PING_COUNT, rx, status, fwd


def _entry(src: str, dst: str, dst_ip: str, tx: int, rx: int, status: str) -> ReachabilityEntry:
    return ReachabilityEntry(src, dst, tx, rx, 100.0 * (tx - rx) / tx, status, dst_ip)


def _dns_reply(t: Topology, cp: ControlPlane, src: str, resolver: str, proto: str = "udp") -> Optional[Device]:
    """The DNS pod answering ``resolver`` for ``src``, or None."""
    if parse_ip(resolver) is None:
        return None
    fwd = walk(t, cp, src, resolver, proto, dport=53)
    if not fwd.ok:
        return None
    pod = t.devices[fwd.delivered_to]
    dns = pod.services.dns
    if pod.crashed or dns is None or not dns.daemon_up or dns.listen_ip != resolver:
        return None
    if fwd.delivered_to != src:
        rev = walk(t, cp, fwd.delivered_to, fwd.src_ip, proto, sport=53)
        if not rev.ok:
            return None
    return pod


def resolve(t: Topology, cp: ControlPlane, src: str, name: str,
            memo: Optional[dict] = None) -> tuple[Optional[str], Optional[str], int, str]:
    """Resolve ``name`` from ``src``; returns (answer, server, latency_ms, error).

    ``memo`` caches resolver replies per (src, resolver) within one snapshot.
    """
    dev = t.devices[src]
    error = "no nameservers"
    latency = 0
    for resolver in dev.host_net.resolvers:
        if memo is None:
            pod = _dns_reply(t, cp, src, resolver)
        else:
            key = (src, resolver)
            if key not in memo:
                memo[key] = _dns_reply(t, cp, src, resolver)
            pod = memo[key]
        if pod is None:
            error = f"no reply from {resolver}"
            latency += 1000
            continue
        latency += pod.services.dns.lookup_latency_ms
        value = pod.services.dns.zone.get(name)
        if value is None:
            error = "NXDOMAIN"
            continue
        if parse_ip(value) is None:
            error = f"SERVFAIL from {resolver}"
            continue
        return value, resolver, latency, ""
    return None, None, latency, error


def get_reachability(t: Topology, ledger: Optional[ToolCallLedger] = None) -> list[ReachabilityEntry]:
    """Ping from every host to every other endpoint by name. One tool call."""
    if ledger is not None:
        ledger.charge("get_reachability")
    tick = ledger.tick if ledger else 0
    cp = control_plane(t, tick)
    out = []
    names = [d.name for d in t.endpoints()]
    memo: dict = {}
    for src in (d.name for d in t.hosts()):
        for dst in names:
            if dst == src:
                continue
            answer, _, _, _ = resolve(t, cp, src, dst, memo)
            if answer is None:
                out.append(ReachabilityEntry(src, dst, None, None, None, "unknown", t.manifest.get(dst, {}).get("ip")))
                continue
            tx, rx, status, _ = _ping(t, cp, src, answer)
            out.append(_entry(src, dst, answer, tx, rx, status))
    return out


def ping_direct_ip(t: Topology, src: str, dst_ip: str, ledger: Optional[ToolCallLedger] = None,
                   tick: int = 0) -> ReachabilityEntry:
    """Ping an address directly, bypassing name resolution."""
    t.device(src)
    if ledger is not None:
        ledger.charge(f"ping {dst_ip} from {src}")
    cp = control_plane(t, ledger.tick if ledger else tick)
    tx, rx, status, fwd = _ping(t, cp, src, dst_ip)
    dest = fwd.delivered_to or dst_ip
    return _entry(src, dest, dst_ip, tx, rx, status)


def trace_path(t: Topology, src: str, dst_ip: str, tick: int = 0) -> Walk:
    """Forward walk used as a ground-truth oracle by tests and helpers."""
    return walk(t, control_plane(t, tick), src, dst_ip)


# -- per-device probes -----------------------------------------------------

ROUTING_DAEMONS = ("zebra", "watchfrr", "ospfd", "bgpd")
FLAP_CARRIER_CHANGES = 12


def _processes(dev: Device) -> list[str]:
    procs = ["init", "sshd"]
    r = dev.routing
    if r.ospf or r.bgp:
        up = [p for p in (r.ospf, r.bgp) if p is not None and p.daemon_up]
        if up:
            procs += ["zebra", "watchfrr"]
        if r.ospf and r.ospf.daemon_up:
            procs.append("ospfd")
        if r.bgp and r.bgp.daemon_up:
            procs.append("bgpd")
    s = dev.services
    if s.dns and s.dns.daemon_up:
        procs.append("named")
    if s.dhcp and s.dhcp.daemon_up:
        procs.append("dhcpd")
    if s.lb:
        procs.append("haproxy")
    elif s.http and s.http.daemon_up:
        procs.append("nginx")
    return procs + list(dev.resources.stress_processes)


def _carrier_changes(state: str) -> int:
    return {"up": 0, "down": 1, "detached": 1}.get(state, FLAP_CARRIER_CHANGES)


def _link_events(t: Topology, dev: Device) -> list[str]:
    events = []
    for iface in dev.interfaces:
        link = t.link_of(dev.name, iface.name)
        state = link.state if link else "detached"
        if state == "down":
            events.append(f"{iface.name}: carrier lost")
        elif state == "detached":
            events.append(f"{iface.name}: link detached from bridge")
        elif state == "flapping":
            for k in range(FLAP_CARRIER_CHANGES):
                events.append(f"{iface.name}: carrier {'lost' if k % 2 == 0 else 'restored'}")
    lease = dev.host_net.dhcp_lease
    if lease:
        events.append(f"dhcp: DHCPACK {lease.ip} gw {lease.gateway} dns {lease.dns}")
    return events


def _probe_data(t: Topology, cp: ControlPlane, dev: Device, kind: str, arg: Optional[str], tick: int) -> dict[str, Any]:
    r = dev.routing
    if kind == "list_ruleset":
        return {
            "chains": {c: [dict(asdict(rule), text=rule.render()) for rule in rules] for c, rules in dev.acl.chains.items()},
            "frag_drop": dev.acl.frag_drop,
        }
    if kind == "iface_addr":
        rows = []
        for i in dev.interfaces:
            link = t.link_of(dev.name, i.name)
            state = link.state_at(tick) if link else "detached"
            rows.append({
                "name": i.name,
                "mac": i.mac,
                "addr": i.addr,
                "admin": i.admin_state,
                "oper": "up" if cp.segments.iface_up(dev, i.name) else "down",
                "link_state": "flapping" if link and link.state == "flapping" else state,
                "bridge": i.bridge,
                "carrier_changes": _carrier_changes(link.state if link else "detached"),
            })
        return {"interfaces": rows}
    if kind == "route_table":
        entries = cp.ribs[dev.name].entries
        return {"routes": [e.render() for e in entries], "entries": [asdict(e) for e in entries]}
    if kind == "route_get":
        e = cp.ribs[dev.name].lookup(arg)
        if e is None:
            return {"target": arg, "error": "network unreachable"}
        out = {"target": arg, **asdict(e)}
        if e.kind == "via" and e.next_hop_device is None:
            out["arp"] = "incomplete"
        elif e.kind == "via":
            static = [a for a in dev.host_net.arp_cache if a.ip == e.next_hop_ip]
            out["arp"] = "permanent" if static else "reachable"
        return out
    if kind == "arp_table":
        return {"entries": [{"ip": ip, "mac": mac, "static": st} for ip, mac, st in arp_view(t, dev.name, tick)]}
    if kind == "resolver_config":
        return {"nameservers": list(dev.host_net.resolvers)}
    if kind == "ospf_neighbors":
        if r.ospf is None:
            return {"configured": False}
        return {
            "configured": True,
            "neighbors": [asdict(a) for a in cp.ospf.get(dev.name, []) if a.state == "Full"],
            "errors": [asdict(a) for a in cp.ospf.get(dev.name, []) if a.state != "Full"],
        }
    if kind == "ospf_config":
        if r.ospf is None:
            return {"configured": False}
        return {
            "configured": True,
            "areas": dict(r.ospf.areas),
            "advertised": list(r.ospf.advertised),
            "interfaces": [{"name": i.name, "addr": i.addr} for i in dev.interfaces],
        }
    if kind == "bgp_summary":
        if r.bgp is None:
            return {"configured": False}
        return {"configured": True, "local_asn": r.bgp.local_asn, "peers": [asdict(s) for s in cp.bgp.get(dev.name, [])]}
    if kind == "bgp_config":
        if r.bgp is None:
            return {"configured": False}
        return {
            "configured": True,
            "local_asn": r.bgp.local_asn,
            "neighbors": [asdict(n) for n in r.bgp.neighbors],
            "advertised": list(r.bgp.advertised),
            "static_routes": [asdict(s) for s in r.static_routes],
            "connected": sorted({network_of(i.addr) for i in dev.interfaces if i.addr}),
        }
    if kind == "qdisc_state":
        return {"qdiscs": [{"iface": i.name, "kind": i.qdisc.kind, "value": i.qdisc.value, "text": i.qdisc.describe()}
                           for i in dev.interfaces]}
    if kind == "process_list":
        return {"processes": _processes(dev)}
    if kind == "socket_list":
        listening = []
        s = dev.services
        if s.dns and s.dns.daemon_up:
            listening += [f"udp {s.dns.listen_ip}:{s.dns.listen_port}", f"tcp {s.dns.listen_ip}:{s.dns.listen_port}"]
        if s.http and s.http.daemon_up:
            listening.append(f"tcp 0.0.0.0:{s.http.listen_port}")
        if s.dhcp and s.dhcp.daemon_up:
            listening.append("udp 0.0.0.0:67")
        return {"listening": listening, "established": dev.resources.open_sockets}
    if kind == "dhcp_link_log":
        out = {"events": _link_events(t, dev)}
        if dev.services.dhcp is not None:
            out["server"] = {"daemon_up": dev.services.dhcp.daemon_up,
                             "subnets": [asdict(s) for s in dev.services.dhcp.subnets]}
        return out
    if kind == "dns_lookup":
        dns = dev.services.dns
        if dns is not None:
            if not dns.daemon_up:
                return {"name": arg, "server": "127.0.0.1", "answer": None, "latency_ms": 0, "error": "connection refused"}
            value = dns.zone.get(arg)
            ok = value is not None and parse_ip(value) is not None
            return {"name": arg, "server": dns.listen_ip, "answer": value if ok else None,
                    "record": value, "latency_ms": dns.lookup_latency_ms, "error": "" if ok else "SERVFAIL"}
        answer, server, latency, error = resolve(t, cp, dev.name, arg)
        return {"name": arg, "server": server, "answer": answer, "latency_ms": latency, "error": error}
    if kind == "http_timing":
        return _http_timing(t, cp, dev, arg)
    if kind == "resource_stats":
        res = dev.resources
        return {"cpu_load": res.cpu_load, "open_sockets": res.open_sockets,
                "stress_processes": list(res.stress_processes), "app_delay_ms": res.app_delay_ms}
    raise ValueError(f"unknown probe kind {kind!r}")


def _http_timing(t: Topology, cp: ControlPlane, dev: Device, url: Optional[str]) -> dict[str, Any]:
    host = (url or "").split("//")[-1].strip("/")
    local = dev.resources.app_delay_ms
    out = {"url": url, "status": 0, "connect_ms": None, "total_ms": None, "local_delay_ms": local}
    ip = t.manifest.get(host, {}).get("ip")
    if ip is None:
        out["error"] = "could not resolve host"
        return out
    fwd = walk(t, cp, dev.name, ip, "tcp", dport=80)
    if not fwd.ok:
        out["error"] = "connect timeout"
        return out
    server = t.devices[fwd.delivered_to]
    if server.services.http is None or not server.services.http.daemon_up:
        out["error"] = "connection refused"
        return out
    if server.services.lb is not None and server.services.lb.overloaded:
        out.update(status=503, connect_ms=2, error="backend queue full")
        return out
    server_ms = 5 + int(200 * server.resources.cpu_load) + server.resources.open_sockets // 10
    out.update(status=200, connect_ms=2, total_ms=2 + server_ms + local)
    return out


def run_probe(t: Topology, device: str, kind: str, ledger: Optional[ToolCallLedger] = None,
              arg: Optional[str] = None, tick: int = 0) -> ProbeResult:
    """Run one structured probe on ``device``; exactly one ledger charge."""
    dev = t.device(device)
    if kind not in PROBE_KINDS:
        raise ValueError(f"unknown probe kind {kind!r}")
    if ledger is not None:
        ledger.charge(f"{kind}({arg}) on {device}" if arg else f"{kind} on {device}")
    if dev.crashed:
        return ProbeResult(kind, device, {"error": "no response"}, responded=False, arg=arg)
    tick = ledger.tick if ledger else tick
    cp = control_plane(t, tick)
    return ProbeResult(kind, device, _probe_data(t, cp, dev, kind, arg, tick), arg=arg)
