"""Named predicates usable in skill fingerprint clauses.

Each predicate receives the probe results fetched for one clause (all plan
steps of the referenced kind, in plan order), the clause parameters as
strings, and an evaluation context.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from .. import faultlib as F
from ..netmodel import Topology
from ..netmodel.model import addr_ip, network_of, parse_ip
from ..probes import ProbeResult


@dataclass
class Context:
    t: Topology
    device: str
    names: list[str] = field(default_factory=list)
    fetched: dict[str, list[ProbeResult]] = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return self.t.devices[self.device].kind

    @property
    def manifest_ip(self) -> Optional[str]:
        return self.t.manifest.get(self.device, {}).get("ip")

    @property
    def manifest_mac(self) -> Optional[str]:
        return self.t.manifest.get(self.device, {}).get("mac")


Predicate = Callable[[list[ProbeResult], dict[str, str], Context], bool]
REGISTRY: dict[str, Predicate] = {}


def predicate(name: str):
    def deco(fn: Predicate) -> Predicate:
        REGISTRY[name] = fn
        return fn
    return deco


def _data(results: list[ProbeResult]) -> list[dict]:
    return [r.data for r in results if r.responded]


def _access(results: list[ProbeResult]) -> Optional[dict]:
    for d in _data(results):
        if d.get("interfaces"):
            return d["interfaces"][0]
    return None


def _ints(value: Optional[str]) -> Optional[set[int]]:
    return None if value is None else {int(v) for v in value.split("|")}


# -- generic ---------------------------------------------------------------


@predicate("unresponsive")
def _unresponsive(results, params, ctx):
    return bool(results) and all(not r.responded for r in results)


@predicate("process_absent")
def _process_absent(results, params, ctx):
    data = _data(results)
    return bool(data) and params["name"] not in data[0]["processes"]


# -- acl -------------------------------------------------------------------


@predicate("drop_rule")
def _drop_rule(results, params, ctx):
    """A drop rule with proto in ``proto`` (``|``-separated) and matching ports."""
    protos = set(params["proto"].split("|"))
    ports = _ints(params.get("port"))
    dports = _ints(params.get("dport"))
    for d in _data(results):
        for rules in d["chains"].values():
            for r in rules:
                if r["verdict"] != "drop" or r["proto"] not in protos:
                    continue
                if ports is not None and not ({r["dport"], r["sport"]} & ports):
                    continue
                if dports is not None and r["dport"] not in dports:
                    continue
                return True
    return False


@predicate("frag_drop")
def _frag_drop(results, params, ctx):
    return any(d.get("frag_drop") for d in _data(results))


# -- link / l2 -------------------------------------------------------------


@predicate("link_state")
def _link_state(results, params, ctx):
    want = params["is"]
    for d in _data(results):
        if any(row["link_state"] == want for row in d["interfaces"]):
            return True
    return False


@predicate("carrier_flapping")
def _carrier_flapping(results, params, ctx):
    floor = int(params.get("min", "3"))
    return any(row["carrier_changes"] >= floor for d in _data(results) for row in d["interfaces"])


@predicate("mac_differs_from_manifest")
def _mac_differs(results, params, ctx):
    acc = _access(results)
    return acc is not None and ctx.manifest_mac is not None and acc["mac"].lower() != ctx.manifest_mac.lower()


# -- host addressing -------------------------------------------------------


@predicate("addr_missing")
def _addr_missing(results, params, ctx):
    acc = _access(results)
    return acc is not None and acc["addr"] is None


def _holders(ctx: Context, ip: str) -> list[str]:
    return sorted(n for n, e in ctx.t.manifest.items() if e["ip"] == ip and n != ctx.device)


@predicate("addr_conflicts_manifest")
def _addr_conflicts(results, params, ctx):
    acc = _access(results)
    if acc is None or acc["addr"] is None:
        return False
    ip = addr_ip(acc["addr"])
    return ip != ctx.manifest_ip and bool(_holders(ctx, ip))


@predicate("addr_differs_manifest")
def _addr_differs(results, params, ctx):
    acc = _access(results)
    if acc is None or acc["addr"] is None:
        return False
    ip = addr_ip(acc["addr"])
    return ip != ctx.manifest_ip and not _holders(ctx, ip)


@predicate("addr_matches_manifest")
def _addr_matches(results, params, ctx):
    acc = _access(results)
    return acc is not None and acc["addr"] is not None and addr_ip(acc["addr"]) == ctx.manifest_ip


@predicate("default_route_missing")
def _default_missing(results, params, ctx):
    data = _data(results)
    return bool(data) and not any(e["prefix"] == "0.0.0.0/0" for e in data[0]["entries"])


@predicate("next_hop_incomplete")
def _nh_incomplete(results, params, ctx):
    return any(d.get("arp") == "incomplete" for d in _data(results))


@predicate("static_arp_present")
def _static_arp(results, params, ctx):
    return any(e["static"] for d in _data(results) for e in d["entries"])


@predicate("resolver_invalid")
def _resolver_invalid(results, params, ctx):
    known = {e["ip"] for e in ctx.t.manifest.values()}
    for d in _data(results):
        if any(parse_ip(ns) is None or ns not in known for ns in d["nameservers"]):
            return True
    return False


@predicate("blackhole_route")
def _blackhole(results, params, ctx):
    return any(e["kind"] == "blackhole" for d in _data(results) for e in d["entries"])


# -- traffic control -------------------------------------------------------


@predicate("qdisc")
def _qdisc(results, params, ctx):
    if "role" in params:
        server = ctx.kind in ("web_server", "load_balancer")
        if (params["role"] == "server") != server:
            return False
    return any(q["kind"] == params["kind"] for d in _data(results) for q in d["qdiscs"])


# -- routing protocols -----------------------------------------------------


@predicate("ospf_iface_unconfigured")
def _ospf_unconfigured(results, params, ctx):
    for d in _data(results):
        if not d.get("configured"):
            continue
        if any(i["addr"] and i["name"] not in d["areas"] for i in d["interfaces"]):
            return True
    return False


@predicate("ospf_neighbors_empty")
def _ospf_empty(results, params, ctx):
    data = _data(results)
    return bool(data) and data[0].get("configured", False) and not data[0]["neighbors"]


@predicate("ospf_configured")
def _ospf_configured(results, params, ctx):
    return any(d.get("configured") for d in _data(results))


@predicate("ospf_area_mismatch_local")
def _ospf_area(results, params, ctx):
    """Area mismatch where this side is off the backbone; needs ospf_config fetched earlier."""
    cfg = _data(ctx.fetched.get("ospf_config", []))
    if not cfg:
        return False
    areas = cfg[0]["areas"]
    return any(
        e["reason"].startswith("area mismatch") and areas.get(e["iface"]) != F.BACKBONE_AREA
        for d in _data(results) for e in d.get("errors", [])
    )


@predicate("bgp_notification_received")
def _bgp_received(results, params, ctx):
    return any(
        p["reason"].startswith("received notification") for d in _data(results) if d.get("configured") for p in d["peers"]
    )


def _access_prefixes(ctx: Context) -> set[str]:
    return {network_of(e["ip"] + "/24") for e in ctx.t.manifest.values()}


@predicate("bgp_access_unadvertised")
def _bgp_unadvertised(results, params, ctx):
    for d in _data(results):
        if d.get("configured") and (set(d["connected"]) & _access_prefixes(ctx)) - set(d["advertised"]):
            return True
    return False


@predicate("bgp_foreign_prefix")
def _bgp_foreign(results, params, ctx):
    want_blackhole = params.get("blackhole") == "yes"
    for d in _data(results):
        if not d.get("configured"):
            continue
        holes = {s["prefix"] for s in d["static_routes"] if s["blackhole"]}
        for prefix in set(d["advertised"]) - set(d["connected"]):
            if (prefix in holes) == want_blackhole:
                return True
    return False


# -- services --------------------------------------------------------------


@predicate("dns_record_mismatch")
def _dns_mismatch(results, params, ctx):
    for d in _data(results):
        expected = ctx.t.manifest.get(d["name"], {}).get("ip")
        if "record" in d and expected is not None and d["record"] != expected:
            return True
    return False


@predicate("dns_latency_over")
def _dns_latency(results, params, ctx):
    limit = int(params.get("ms", str(F.DNS_LATENCY_THRESHOLD_MS)))
    return any(d["latency_ms"] > limit for d in _data(results) if not d.get("error"))


@predicate("dhcp_subnet_missing")
def _dhcp_missing(results, params, ctx):
    hosts = {network_of(ctx.t.manifest[h.name]["ip"] + "/24") for h in ctx.t.hosts() if h.name in ctx.t.manifest}
    for d in _data(results):
        if "server" in d and hosts - {s["prefix"] for s in d["server"]["subnets"]}:
            return True
    return False


@predicate("ping_fails")
def _ping_fails(results, params, ctx):
    return any(d["status"] not in ("ok", "loss") for d in _data(results))


@predicate("http_status")
def _http_status(results, params, ctx):
    return any(d.get("status") == int(params["is"]) for d in _data(results))


@predicate("local_delay_over")
def _local_delay(results, params, ctx):
    limit = int(params.get("ms", str(F.APP_DELAY_THRESHOLD_MS)))
    return any((d.get("local_delay_ms") or 0) > limit for d in _data(results))


@predicate("sockets_over")
def _sockets(results, params, ctx):
    limit = int(params.get("n", str(F.SOCKET_THRESHOLD)))
    return any(d["open_sockets"] > limit for d in _data(results))


@predicate("stress_present")
def _stress(results, params, ctx):
    role = params.get("role")
    if role is not None and (role == "server") != (ctx.kind in ("web_server", "load_balancer")):
        return False
    return any(d["stress_processes"] for d in _data(results))
