"""Four-phase broad search over the network.

Each sweep fetches a batch of probes per device (one ledger charge per
device visited) and turns anomalies into typed flags keyed to fault labels
or families.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional

from . import faultlib as F
from .netmodel import Topology
from .netmodel.model import addr_ip, network_of, parse_cidr, parse_ip
from .probes import ProbeResult, ToolCallLedger, ping_direct_ip, run_probe

PHASES = ("A", "B", "C", "D")
SWEEPS = {
    "A": ("infra_sweep", "l2_snapshot"),
    "B": ("ospf_snapshot", "bgp_snapshot", "tc_snapshot"),
    "C": ("host_path_snapshot", "dhcp_link_history", "safe_reachability"),
    "D": ("service_snapshot", "pressure_sweep"),
}
FLAP_MIN_CHANGES = 3
ROUTING_PROCS = {"ospf": "ospfd", "bgp": "bgpd"}


@dataclass
class Flag:
    device: str
    hint: str
    evidence: dict[str, Any]
    phase: str
    check: str
    suspects: tuple[str, ...] = ()

    @property
    def family(self) -> str:
        return family_of_hint(self.hint)

    def render(self) -> str:
        return f"{self.device} {self.hint}"


@dataclass
class PhaseReport:
    phase: str
    sweeps_run: list[str] = field(default_factory=list)
    flags: list[Flag] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.flags

    def trace_lines(self) -> list[str]:
        by_sweep: dict[str, list[Flag]] = {s: [] for s in self.sweeps_run}
        for f in self.flags:
            by_sweep.setdefault(f.check, []).append(f)
        lines = []
        for sweep in self.sweeps_run:
            flags = by_sweep[sweep]
            body = "; ".join(f.render() for f in flags) if flags else "clean"
            lines.append(f"P{self.phase}: {sweep}: {body}")
        return lines


# host_missing_route has no catalog label; it is host_ip-family evidence
EXTRA_HINTS = {"host_missing_route": "host_ip"}


def family_of_hint(hint: str) -> str:
    if hint in F.FAMILY_OF:
        return F.FAMILY_OF[hint]
    if hint in EXTRA_HINTS:
        return EXTRA_HINTS[hint]
    if hint in F.FAMILIES:
        return hint
    raise ValueError(f"unresolvable hint {hint!r}")


class _Fetch:
    """Per-device probe batch charged once to the ledger."""

    def __init__(self, t: Topology, device: str, sweep: str, ledger: Optional[ToolCallLedger]):
        self.t = t
        self.device = device
        self.tick = ledger.tick if ledger else 0
        self._cache: dict[tuple[str, Optional[str]], ProbeResult] = {}
        if ledger is not None:
            ledger.charge(f"{sweep} on {device}")

    def __call__(self, kind: str, arg: Optional[str] = None) -> ProbeResult:
        key = (kind, arg)
        if key not in self._cache:
            self._cache[key] = run_probe(self.t, self.device, kind, None, arg, tick=self.tick)
        return self._cache[key]

    def ping(self, ip: str) -> str:
        return ping_direct_ip(self.t, self.device, ip, None, tick=self.tick).status


def _names(t: Topology, devices: Optional[Iterable[str]], pred: Callable) -> list[str]:
    pool = sorted(devices) if devices is not None else sorted(t.devices)
    return [n for n in pool if n in t.devices and pred(t.devices[n])]


def _not_switch(d) -> bool:
    return d.kind != "switch"


# -- phase A ---------------------------------------------------------------

ACL_TABLE: tuple[tuple[str, Callable[[dict], bool]], ...] = (
    ("arp_acl_block", lambda r: r["proto"] == "arp"),
    ("ospf_acl_block", lambda r: r["proto"] in ("ospf", "89")),
    ("bgp_acl_block", lambda r: r["proto"] == "tcp" and 179 in (r["dport"], r["sport"])),
    ("http_acl_block", lambda r: r["proto"] == "tcp" and r["dport"] == 80),
    ("dns_port_blocked", lambda r: r["proto"] in ("tcp", "udp") and r["dport"] == 53),
    ("icmp_acl_block", lambda r: r["proto"] == "icmp"),
)


def acl_fingerprint(ruleset: dict) -> Optional[tuple[str, list[str]]]:
    """First matching ACL fingerprint over a list_ruleset snapshot."""
    drops = [(c, r) for c, rules in ruleset.get("chains", {}).items() for r in rules if r["verdict"] == "drop"]
    for label, match in ACL_TABLE:
        hits = [f"{c}: {r['text']}" for c, r in drops if match(r)]
        if hits:
            return label, hits
    if ruleset.get("frag_drop"):
        return "link_fragmentation_disabled", ["oversize fragments dropped"]
    return None


def _has_default(routes: ProbeResult) -> bool:
    return any(e["prefix"] == "0.0.0.0/0" for e in routes.data["entries"])


def _access_up(addrs: ProbeResult) -> bool:
    rows = addrs.data["interfaces"]
    return bool(rows) and rows[0]["oper"] == "up"


def _infra_device(t: Topology, name: str, ledger) -> list[Flag]:
    fetch = _Fetch(t, name, "infra_sweep", ledger)
    rules = fetch("list_ruleset")
    if not rules.responded:
        return [Flag(name, "host_crash", {"probe": "no response to ruleset/addr/route fetch"}, "A", "infra_sweep")]
    flags = []
    acl = acl_fingerprint(rules.data)
    if acl:
        flags.append(Flag(name, acl[0], {"drops": acl[1]}, "A", "infra_sweep"))
    dev = t.devices[name]
    if not dev.is_endpoint:
        return flags
    addrs = fetch("iface_addr")
    routes = fetch("route_table")
    arp = fetch("arp_table")
    resolv = fetch("resolver_config")
    if not _access_up(addrs):
        return flags
    access = addrs.data["interfaces"][0]
    if access["addr"] is None:
        flags.append(Flag(name, "host_missing_ip", {"iface": access["name"], "addr": None}, "A", "infra_sweep"))
    elif not _has_default(routes):
        flags.append(Flag(name, "host_missing_route", {"routes": routes.data["routes"]}, "A", "infra_sweep"))
    seen: dict[str, str] = {}
    for e in arp.data["entries"]:
        if e["mac"] in seen and seen[e["mac"]] != e["ip"]:
            flags.append(Flag(name, "mac_address_conflict", {"arp": [seen[e["mac"]], e["ip"], e["mac"]]}, "A", "infra_sweep"))
        seen[e["mac"]] = e["ip"]
    bad = [r for r in resolv.data["nameservers"] if parse_ip(r) is None]
    if bad:
        flags.append(Flag(name, "host_incorrect_dns", {"nameservers": resolv.data["nameservers"]}, "A", "infra_sweep"))
    static = [e for e in arp.data["entries"] if e["static"]]
    if static:
        flags.append(Flag(name, "host_static_arp", {"static_arp": static}, "A", "infra_sweep"))
    return flags


def infra_sweep(t: Topology, ledger: Optional[ToolCallLedger] = None,
                devices: Optional[Iterable[str]] = None) -> list[Flag]:
    """Rulesets, addresses, routes, ARP and resolvers on every device."""
    out = []
    for name in _names(t, devices, _not_switch):
        out += _infra_device(t, name, ledger)
    return out


def l2_snapshot(t: Topology, ledger: Optional[ToolCallLedger] = None,
                devices: Optional[Iterable[str]] = None) -> list[Flag]:
    """Duplicate MACs, down or detached links and carrier flapping."""
    owners: dict[str, list[tuple[str, str]]] = {}
    flags = []
    for name in _names(t, devices, _not_switch):
        addrs = _Fetch(t, name, "l2_snapshot", ledger)("iface_addr")
        if not addrs.responded:
            continue
        for row in addrs.data["interfaces"]:
            owners.setdefault(row["mac"].lower(), []).append((name, row["name"]))
            if row["link_state"] in ("down", "detached"):
                hint = "link_down" if row["link_state"] == "down" else "link_detach"
                flags.append(Flag(name, hint, {"iface": row["name"], "link": row["link_state"]}, "A", "l2_snapshot"))
            elif row["carrier_changes"] >= FLAP_MIN_CHANGES:
                flags.append(Flag(name, "link_flap", {"iface": row["name"], "carrier_changes": row["carrier_changes"]},
                                  "A", "l2_snapshot"))
    for mac, where in sorted(owners.items()):
        devs = sorted({d for d, _ in where})
        if len(where) > 1:
            for d in devs:
                flags.append(Flag(d, "mac_address_conflict", {"mac": mac, "interfaces": [f"{x}:{y}" for x, y in where]},
                                  "A", "l2_snapshot", tuple(devs)))
    return flags


# -- phase B ---------------------------------------------------------------


def ospf_snapshot(t: Topology, ledger: Optional[ToolCallLedger] = None,
                  devices: Optional[Iterable[str]] = None) -> list[Flag]:
    """Daemon state, neighbor tables and area agreement on OSPF routers."""
    flags = []
    for name in _names(t, devices, lambda d: d.is_router):
        fetch = _Fetch(t, name, "ospf_snapshot", ledger)
        cfg = fetch("ospf_config")
        if not cfg.responded or not cfg.data["configured"]:
            continue
        nbrs = fetch("ospf_neighbors").data
        procs = fetch("process_list").data["processes"]
        if "ospfd" not in procs:
            flags.append(Flag(name, "frr_service_down", {"processes": procs, "missing": "ospfd"}, "B", "ospf_snapshot"))
            continue
        mismatch = [e for e in nbrs["errors"] if e["reason"].startswith("area mismatch")
                    and cfg.data["areas"].get(e["iface"]) != F.BACKBONE_AREA]
        if mismatch:
            flags.append(Flag(name, "ospf_area_misconfiguration", {"errors": mismatch, "areas": cfg.data["areas"]},
                              "B", "ospf_snapshot"))
            continue
        peer_down = any(e["reason"] == "daemon down" for e in nbrs["errors"])
        if not nbrs["neighbors"] and not peer_down:
            flags.append(Flag(name, "ospf_neighbor_missing", {"neighbors": [], "errors": nbrs["errors"]},
                              "B", "ospf_snapshot"))
    return flags


def bgp_snapshot(t: Topology, ledger: Optional[ToolCallLedger] = None,
                 devices: Optional[Iterable[str]] = None) -> list[Flag]:
    """Sessions, ASNs and advertised prefixes on BGP routers."""
    access = {network_of(e["ip"] + "/24") for e in t.manifest.values()}
    flags = []
    for name in _names(t, devices, lambda d: d.is_router):
        fetch = _Fetch(t, name, "bgp_snapshot", ledger)
        cfg = fetch("bgp_config")
        if not cfg.responded or not cfg.data["configured"]:
            continue
        procs = fetch("process_list").data["processes"]
        if "bgpd" not in procs:
            flags.append(Flag(name, "frr_service_down", {"processes": procs, "missing": "bgpd"}, "B", "bgp_snapshot"))
            continue
        peers = fetch("bgp_summary").data["peers"]
        rejected = [p for p in peers if p["reason"].startswith("received notification")]
        if rejected:
            flags.append(Flag(name, "bgp_asn_misconfig", {"local_asn": cfg.data["local_asn"], "sessions": rejected},
                              "B", "bgp_snapshot"))
            continue
        advertised = set(cfg.data["advertised"])
        connected = set(cfg.data["connected"])
        missing = sorted((connected & access) - advertised)
        if missing:
            flags.append(Flag(name, "bgp_missing_route_advertisement", {"not_advertised": missing},
                              "B", "bgp_snapshot"))
        blackholes = {s["prefix"] for s in cfg.data["static_routes"] if s["blackhole"]}
        for prefix in sorted(advertised - connected):
            hint = "bgp_blackhole_route_leak" if prefix in blackholes else "bgp_hijacking"
            flags.append(Flag(name, hint, {"foreign_prefix": prefix, "blackhole": prefix in blackholes},
                              "B", "bgp_snapshot"))
    return flags


SERVER_KINDS = ("web_server", "load_balancer")


def tc_snapshot(t: Topology, ledger: Optional[ToolCallLedger] = None,
                devices: Optional[Iterable[str]] = None) -> list[Flag]:
    """One flag per interface carrying a non-default qdisc."""
    flags = []
    for name in _names(t, devices, _not_switch):
        q = _Fetch(t, name, "tc_snapshot", ledger)("qdisc_state")
        if not q.responded:
            continue
        for row in q.data["qdiscs"]:
            if row["kind"] == "default":
                continue
            if row["kind"] == "corrupt":
                hint = "link_high_packet_corruption"
            elif row["kind"] == "rate_limit" and t.devices[name].kind in SERVER_KINDS:
                hint = "incast_traffic_network_limitation"
            elif row["kind"] == "rate_limit":
                hint = "link_bandwidth_throttling"
            else:
                hint = "tc"
            flags.append(Flag(name, hint, {"iface": row["iface"], "qdisc": row["text"]}, "B", "tc_snapshot"))
    return flags


# -- phase C ---------------------------------------------------------------


def path_target(t: Topology, host: str) -> Optional[str]:
    """A manifest address outside ``host``'s own subnet."""
    own = t.manifest.get(host, {}).get("ip")
    own_net = network_of(own + "/24") if own else None
    for name, entry in sorted(t.manifest.items()):
        if name != host and network_of(entry["ip"] + "/24") != own_net:
            return entry["ip"]
    return None


def host_path_snapshot(t: Topology, host: str, target: Optional[str], ledger: Optional[ToolCallLedger] = None
                       ) -> Optional[Flag]:
    """Kernel path from ``host`` to ``target``: route lookup plus next-hop ARP."""
    fetch = _Fetch(t, host, "host_path_snapshot", ledger)
    addrs = fetch("iface_addr")
    if not addrs.responded:
        return None
    routes = fetch("route_table")
    black = [e for e in routes.data["entries"] if e["kind"] == "blackhole"]
    if black:
        return Flag(host, "host_static_blackhole", {"routes": [b["prefix"] for b in black]}, "C", "host_path_snapshot")
    access = addrs.data["interfaces"][0] if addrs.data["interfaces"] else None
    if access is None or access["addr"] is None:
        return None
    ip = addr_ip(access["addr"])
    expected = t.manifest.get(host, {}).get("ip")
    if expected and ip != expected:
        holders = sorted(n for n, e in t.manifest.items() if e["ip"] == ip and n != host)
        if holders:
            return Flag(host, "host_ip_conflict", {"addr": ip, "manifest_holder": holders}, "C",
                        "host_path_snapshot", (host, *holders))
        return Flag(host, "host_wrong_ip", {"addr": ip, "manifest": expected}, "C", "host_path_snapshot")
    if not _has_default(routes):
        return Flag(host, "host_wrong_netmask", {"addr": access["addr"], "routes": routes.data["routes"]},
                    "C", "host_path_snapshot")
    if target is not None:
        rg = fetch("route_get", target)
        if rg.data.get("arp") == "incomplete":
            return Flag(host, "host_wrong_gateway", {"route": rg.data}, "C", "host_path_snapshot")
        arp = fetch("arp_table")
        static = [e for e in arp.data["entries"] if e["static"]]
        if static:
            return Flag(host, "host_static_arp", {"static_arp": static}, "C", "host_path_snapshot")
    return None


def dhcp_link_history(t: Topology, host: str, ledger: Optional[ToolCallLedger] = None) -> list[Flag]:
    """Carrier history on ``host``; repeated loss/restore is a flap."""
    log = _Fetch(t, host, "dhcp_link_history", ledger)("dhcp_link_log")
    if not log.responded:
        return []
    per_iface: dict[str, int] = {}
    for event in log.data["events"]:
        if "carrier" in event:
            iface = event.split(":")[0]
            per_iface[iface] = per_iface.get(iface, 0) + 1
    return [Flag(host, "link_flap", {"iface": i, "carrier_events": n}, "C", "dhcp_link_history")
            for i, n in sorted(per_iface.items()) if n >= FLAP_MIN_CHANGES]


def safe_reachability(t: Topology, ledger: Optional[ToolCallLedger] = None,
                      devices: Optional[Iterable[str]] = None) -> dict[str, dict[str, str]]:
    """Direct-IP matrix from hosts to service endpoints; one charge, no flags."""
    if ledger is not None:
        ledger.charge("safe_reachability")
    tick = ledger.tick if ledger else 0
    hosts = _names(t, devices, lambda d: d.kind == "host")
    services = [d.name for d in t.endpoints() if d.kind != "host"]
    return {
        h: {s: ping_direct_ip(t, h, t.manifest[s]["ip"], None, tick=tick).status for s in services}
        for h in hosts
    }


# -- phase D ---------------------------------------------------------------


def service_snapshot(t: Topology, host: str, ledger: Optional[ToolCallLedger] = None) -> list[Flag]:
    """Service health on ``host``: DNS answers, DHCP config, LB and client HTTP timing."""
    dev = t.devices[host]
    fetch = _Fetch(t, host, "service_snapshot", ledger)
    procs = fetch("process_list")
    if not procs.responded:
        return []
    running = procs.data["processes"]
    flags = []
    if dev.kind == "dns_pod":
        if "named" not in running:
            return [Flag(host, "dns_service_down", {"processes": running, "missing": "named"}, "D", "service_snapshot")]
        wrong, slow = [], []
        for name, entry in sorted(t.manifest.items()):
            ans = fetch("dns_lookup", name).data
            if ans.get("record") != entry["ip"]:
                wrong.append({"name": name, "record": ans.get("record"), "manifest": entry["ip"]})
            if ans["latency_ms"] > F.DNS_LATENCY_THRESHOLD_MS:
                slow.append({"name": name, "latency_ms": ans["latency_ms"]})
        if wrong:
            flags.append(Flag(host, "dns_record_error", {"records": wrong}, "D", "service_snapshot"))
        elif slow:
            flags.append(Flag(host, "dns_lookup_latency", {"lookups": slow[:3]}, "D", "service_snapshot"))
    elif dev.kind == "dhcp_server":
        if "dhcpd" not in running:
            return [Flag(host, "dhcp_service_down", {"processes": running, "missing": "dhcpd"}, "D", "service_snapshot")]
        subnets = fetch("dhcp_link_log").data["server"]["subnets"]
        served = {s["prefix"] for s in subnets}
        clients = {network_of(t.manifest[h.name]["ip"] + "/24") for h in t.hosts() if h.name in t.manifest}
        missing = sorted(clients - served)
        if missing:
            flags.append(Flag(host, "dhcp_missing_subnet", {"unserved": missing}, "D", "service_snapshot"))
        for s in subnets:
            if fetch.ping(s["gateway"]) not in ("ok", "loss"):
                flags.append(Flag(host, "dhcp_spoofed_subnet", {"subnet": s}, "D", "service_snapshot"))
                break
        for s in subnets:
            if fetch.ping(s["dns"]) not in ("ok", "loss"):
                flags.append(Flag(host, "dhcp_spoofed_dns", {"subnet": s}, "D", "service_snapshot"))
                break
    elif dev.kind == "load_balancer":
        timing = fetch("http_timing", f"http://{host}/").data
        if timing["status"] == 503:
            flags.append(Flag(host, "load_balancer_overload", {"http": timing}, "D", "service_snapshot"))
    elif dev.kind == "host":
        web = sorted(d.name for d in t.by_kind("web_server"))
        if web:
            timing = fetch("http_timing", f"http://{web[0]}/").data
            if timing["local_delay_ms"] > F.APP_DELAY_THRESHOLD_MS:
                flags.append(Flag(host, "sender_application_delay", {"http": timing}, "D", "service_snapshot"))
    return flags


def pressure_sweep(t: Topology, ledger: Optional[ToolCallLedger] = None,
                   devices: Optional[Iterable[str]] = None) -> list[Flag]:
    """CPU, sockets and stress processes on endpoints."""
    flags = []
    for name in _names(t, devices, lambda d: d.is_endpoint):
        stats = _Fetch(t, name, "pressure_sweep", ledger)("resource_stats")
        if not stats.responded:
            continue
        s = stats.data
        kind = t.devices[name].kind
        if s["open_sockets"] > F.SOCKET_THRESHOLD:
            flags.append(Flag(name, "web_dos_attack", {"open_sockets": s["open_sockets"], "cpu": s["cpu_load"]},
                              "D", "pressure_sweep"))
        elif s["stress_processes"] and kind in SERVER_KINDS:
            flags.append(Flag(name, "receiver_resource_contention", {"stress": s["stress_processes"]}, "D", "pressure_sweep"))
        elif s["stress_processes"]:
            flags.append(Flag(name, "sender_resource_contention", {"stress": s["stress_processes"]}, "D", "pressure_sweep"))
    return flags


# -- orchestration ---------------------------------------------------------


def run_sweep(t: Topology, sweep: str, ledger: Optional[ToolCallLedger] = None,
              devices: Optional[Iterable[str]] = None) -> list[Flag]:
    """Run one named sweep, optionally restricted to ``devices``."""
    pool = list(devices) if devices is not None else None
    if sweep in ("host_path_snapshot", "dhcp_link_history"):
        out = []
        for h in _names(t, pool, lambda d: d.is_endpoint):
            if sweep == "host_path_snapshot":
                flag = host_path_snapshot(t, h, path_target(t, h), ledger)
                out += [flag] if flag else []
            else:
                out += dhcp_link_history(t, h, ledger)
        return out
    if sweep == "safe_reachability":
        safe_reachability(t, ledger, pool)
        return []
    if sweep == "service_snapshot":
        out = []
        for h in _names(t, pool, lambda d: d.is_endpoint):
            out += service_snapshot(t, h, ledger)
        return out
    fn = {
        "infra_sweep": infra_sweep,
        "l2_snapshot": l2_snapshot,
        "ospf_snapshot": ospf_snapshot,
        "bgp_snapshot": bgp_snapshot,
        "tc_snapshot": tc_snapshot,
        "pressure_sweep": pressure_sweep,
    }[sweep]
    return fn(t, ledger, pool)


def run_phase(t: Topology, phase: str, ledger: Optional[ToolCallLedger] = None,
              devices: Optional[Iterable[str]] = None) -> PhaseReport:
    report = PhaseReport(phase)
    for sweep in SWEEPS[phase]:
        report.sweeps_run.append(sweep)
        report.flags += run_sweep(t, sweep, ledger, devices)
    return report


def deep_scan(t: Topology, ledger: Optional[ToolCallLedger] = None,
              devices: Optional[Iterable[str]] = None) -> tuple[list[PhaseReport], list[Flag]]:
    """Phases A to D in order, stopping after the first phase that flags."""
    reports = []
    for phase in PHASES:
        report = run_phase(t, phase, ledger, devices)
        reports.append(report)
        if not report.clean:
            return reports, report.flags
    return reports, []


def recheck(t: Topology, flag: Flag, ledger: Optional[ToolCallLedger] = None) -> bool:
    """Re-read the decisive evidence for ``flag`` on its device only."""
    again = run_sweep(t, flag.check, ledger, [flag.device]) if flag.check != "l2_snapshot" else \
        run_sweep(t, flag.check, ledger, flag.suspects or [flag.device])
    return any(f.device == flag.device and f.hint == flag.hint for f in again)
