"""In-memory network model: devices, interfaces, links and per-device config."""

from __future__ import annotations

import ipaddress
import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Any, Iterator, Optional

SIZE_CLASSES = ("small", "medium", "large")
SCENARIO_CLASSES = ("clos_bgp", "campus_ospf_service", "isp_static")
DEVICE_KINDS = (
    "host",
    "router",
    "switch",
    "dns_pod",
    "dhcp_server",
    "web_server",
    "load_balancer",
)
ENDPOINT_KINDS = frozenset({"host", "dns_pod", "dhcp_server", "web_server", "load_balancer"})
SERVICE_KINDS = ENDPOINT_KINDS - {"host"}
QDISC_KINDS = ("default", "rate_limit", "corrupt", "netem_delay")
LINK_STATES = ("up", "down", "detached", "flapping")
CHAINS = ("input", "forward", "output")


@lru_cache(maxsize=65536)
def parse_cidr(text: str) -> tuple[int, int]:
    """Parse ``a.b.c.d/len`` into ``(ip_int, prefix_len)``."""
    iface = ipaddress.IPv4Interface(text)
    return int(iface.ip), iface.network.prefixlen


@lru_cache(maxsize=65536)
def parse_ip(text: str) -> Optional[int]:
    """Return the integer form of an IPv4 address, or None if malformed."""
    try:
        return int(ipaddress.IPv4Address(text))
    except (ipaddress.AddressValueError, ValueError):
        return None


def ip_str(value: int) -> str:
    return str(ipaddress.IPv4Address(value))


def mask(plen: int) -> int:
    return (0xFFFFFFFF << (32 - plen)) & 0xFFFFFFFF if plen else 0


def network_of(text: str) -> str:
    """``10.1.0.7/24`` -> ``10.1.0.0/24``."""
    ip, plen = parse_cidr(text)
    return f"{ip_str(ip & mask(plen))}/{plen}"


def in_prefix(ip: int, prefix: str) -> bool:
    net, plen = parse_cidr(prefix)
    return (ip & mask(plen)) == (net & mask(plen))


def addr_ip(addr: Optional[str]) -> Optional[str]:
    return addr.split("/")[0] if addr else None


@dataclass
class Qdisc:
    kind: str = "default"
    value: Optional[int] = None  # kbit/s, percent or ms depending on kind

    def describe(self) -> str:
        if self.kind == "rate_limit":
            return f"tbf rate {self.value}kbit"
        if self.kind == "corrupt":
            return f"netem corrupt {self.value}%"
        if self.kind == "netem_delay":
            return f"netem delay {self.value}ms"
        return "noqueue"


@dataclass
class Interface:
    name: str
    mac: str
    addr: Optional[str] = None
    admin_state: str = "up"
    oper_state: str = "up"
    bridge: Optional[str] = None
    qdisc: Qdisc = field(default_factory=Qdisc)


@dataclass
class Link:
    a: tuple[str, str]
    b: tuple[str, str]
    state: str = "up"
    period: Optional[int] = None
    loss_percent: float = 0.0
    bandwidth_kbps: Optional[int] = None

    @property
    def link_id(self) -> str:
        return f"{self.a[0]}:{self.a[1]}--{self.b[0]}:{self.b[1]}"

    def state_at(self, tick: int) -> str:
        """Effective state; flapping links are a square wave over the turn clock."""
        if self.state == "flapping":
            period = self.period or 2
            return "up" if (tick // period) % 2 == 0 else "down"
        return self.state

    def other(self, dev: str, iface: str) -> tuple[str, str]:
        return self.b if (dev, iface) == tuple(self.a) else self.a


@dataclass
class Rule:
    verdict: str = "drop"
    proto: Optional[str] = None
    dport: Optional[int] = None
    sport: Optional[int] = None
    icmp_type: Optional[str] = None

    def matches(self, proto: str, dport: Optional[int] = None, sport: Optional[int] = None) -> bool:
        if self.proto is not None and self.proto != proto:
            return False
        if self.dport is not None and self.dport != dport:
            return False
        if self.sport is not None and self.sport != sport:
            return False
        return True

    def render(self) -> str:
        parts = []
        if self.proto == "arp":
            parts.append("arp")
        elif self.proto == "ospf":
            parts.append("ip protocol ospf")
        elif self.proto == "icmp":
            parts.append(f"icmp type {self.icmp_type or 'echo-request'}")
        elif self.proto:
            parts.append(self.proto)
        if self.dport is not None:
            parts.append(f"dport {self.dport}")
        if self.sport is not None:
            parts.append(f"sport {self.sport}")
        parts.append(self.verdict)
        return " ".join(parts)


@dataclass
class AclRuleset:
    chains: dict[str, list[Rule]] = field(default_factory=lambda: {c: [] for c in CHAINS})
    frag_drop: bool = False

    def verdict(self, chain: str, proto: str, dport: Optional[int] = None, sport: Optional[int] = None) -> str:
        """First matching rule wins; default policy accept."""
        for rule in self.chains.get(chain, []):
            if rule.matches(proto, dport, sport):
                return rule.verdict
        return "accept"

    def rules(self) -> Iterator[tuple[str, Rule]]:
        for chain, rules in self.chains.items():
            for rule in rules:
                yield chain, rule


@dataclass
class StaticRoute:
    prefix: str
    next_hop: Optional[str] = None
    blackhole: bool = False


@dataclass
class OspfConfig:
    daemon_up: bool = True
    areas: dict[str, int] = field(default_factory=dict)
    advertised: list[str] = field(default_factory=list)


@dataclass
class BgpNeighbor:
    peer_ip: str
    remote_asn: int


@dataclass
class BgpConfig:
    local_asn: int
    daemon_up: bool = True
    neighbors: list[BgpNeighbor] = field(default_factory=list)
    advertised: list[str] = field(default_factory=list)


@dataclass
class RoutingConfig:
    static_routes: list[StaticRoute] = field(default_factory=list)
    ospf: Optional[OspfConfig] = None
    bgp: Optional[BgpConfig] = None


@dataclass
class ArpEntry:
    ip: str
    mac: str
    static: bool = True


@dataclass
class DhcpLease:
    ip: str
    gateway: str
    dns: str
    subnet: str


@dataclass
class HostNetConfig:
    resolvers: list[str] = field(default_factory=list)
    default_gateway: Optional[str] = None
    arp_cache: list[ArpEntry] = field(default_factory=list)
    dhcp_lease: Optional[DhcpLease] = None


@dataclass
class DnsService:
    listen_ip: str
    zone: dict[str, str] = field(default_factory=dict)
    daemon_up: bool = True
    listen_port: int = 53
    lookup_latency_ms: int = 5


@dataclass
class HttpService:
    daemon_up: bool = True
    listen_port: int = 80


@dataclass
class DhcpSubnet:
    prefix: str
    gateway: str
    dns: str


@dataclass
class DhcpService:
    daemon_up: bool = True
    subnets: list[DhcpSubnet] = field(default_factory=list)


@dataclass
class LbService:
    backends: list[str] = field(default_factory=list)
    overloaded: bool = False


@dataclass
class ServiceState:
    dns: Optional[DnsService] = None
    http: Optional[HttpService] = None
    dhcp: Optional[DhcpService] = None
    lb: Optional[LbService] = None


@dataclass
class ResourceState:
    cpu_load: float = 0.05
    open_sockets: int = 12
    stress_processes: list[str] = field(default_factory=list)
    app_delay_ms: int = 0


@dataclass
class Device:
    name: str
    kind: str
    interfaces: list[Interface] = field(default_factory=list)
    routing: RoutingConfig = field(default_factory=RoutingConfig)
    acl: AclRuleset = field(default_factory=AclRuleset)
    host_net: HostNetConfig = field(default_factory=HostNetConfig)
    services: ServiceState = field(default_factory=ServiceState)
    resources: ResourceState = field(default_factory=ResourceState)
    crashed: bool = False

    def iface(self, name: str) -> Interface:
        for i in self.interfaces:
            if i.name == name:
                return i
        raise KeyError(f"{self.name} has no interface {name}")

    @property
    def is_router(self) -> bool:
        return self.kind == "router"

    @property
    def is_endpoint(self) -> bool:
        return self.kind in ENDPOINT_KINDS

    @property
    def access_iface(self) -> Optional[Interface]:
        return self.interfaces[0] if self.interfaces else None


@dataclass
class Topology:
    scenario_id: str
    scenario: str
    size_class: str
    seed: int
    devices: dict[str, Device] = field(default_factory=dict)
    links: list[Link] = field(default_factory=list)
    # static name -> {ip, mac} manifest published alongside the lab
    manifest: dict[str, dict[str, str]] = field(default_factory=dict)

    def __hash__(self) -> int:  # identity hash; used for per-topology caches
        return id(self)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Topology):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def device(self, name: str) -> Device:
        try:
            return self.devices[name]
        except KeyError:
            raise KeyError(f"unknown device {name!r}") from None

    def by_kind(self, *kinds: str) -> list[Device]:
        return [d for _, d in sorted(self.devices.items()) if d.kind in kinds]

    def routers(self) -> list[Device]:
        return self.by_kind("router")

    def endpoints(self) -> list[Device]:
        return self.by_kind(*ENDPOINT_KINDS)

    def hosts(self) -> list[Device]:
        return self.by_kind("host")

    def link_of(self, dev: str, iface: str) -> Optional[Link]:
        for link in self.links:
            if tuple(link.a) == (dev, iface) or tuple(link.b) == (dev, iface):
                return link
        return None

    def node_count(self) -> int:
        return len(self.devices)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Topology":
        return _topology_from_dict(data)

    @classmethod
    def from_json(cls, text: str) -> "Topology":
        return _topology_from_dict(json.loads(text))


def validate(t: Topology) -> None:
    """Raise ValueError if the topology breaks a structural invariant."""
    for name, dev in t.devices.items():
        if name != dev.name:
            raise ValueError(f"device key {name!r} does not match name {dev.name!r}")
        if dev.kind not in DEVICE_KINDS:
            raise ValueError(f"{name}: unknown kind {dev.kind!r}")
        names = [i.name for i in dev.interfaces]
        if len(names) != len(set(names)):
            raise ValueError(f"{name}: duplicate interface names")
        if dev.kind != "router" and (dev.routing.ospf or dev.routing.bgp):
            raise ValueError(f"{name}: non-router carries a routing protocol section")
    seen: set[tuple[str, str]] = set()
    for link in t.links:
        for end in (tuple(link.a), tuple(link.b)):
            dev = t.devices.get(end[0])
            if dev is None or end[1] not in {i.name for i in dev.interfaces}:
                raise ValueError(f"link endpoint {end} does not exist")
            if end in seen:
                raise ValueError(f"interface {end} attached to two links")
            seen.add(end)
        if link.state not in LINK_STATES:
            raise ValueError(f"bad link state {link.state!r}")


# -- deserialisation -------------------------------------------------------


def _opt(cls, data):
    return None if data is None else cls(**data)


def _device_from_dict(d: dict[str, Any]) -> Device:
    r = d["routing"]
    ospf = _opt(OspfConfig, r.get("ospf"))
    bgp = None
    if r.get("bgp") is not None:
        b = dict(r["bgp"])
        b["neighbors"] = [BgpNeighbor(**n) for n in b["neighbors"]]
        bgp = BgpConfig(**b)
    routing = RoutingConfig(
        static_routes=[StaticRoute(**s) for s in r["static_routes"]], ospf=ospf, bgp=bgp
    )
    acl = AclRuleset(
        chains={c: [Rule(**x) for x in rules] for c, rules in d["acl"]["chains"].items()},
        frag_drop=d["acl"]["frag_drop"],
    )
    hn = d["host_net"]
    host_net = HostNetConfig(
        resolvers=list(hn["resolvers"]),
        default_gateway=hn["default_gateway"],
        arp_cache=[ArpEntry(**a) for a in hn["arp_cache"]],
        dhcp_lease=_opt(DhcpLease, hn["dhcp_lease"]),
    )
    s = d["services"]
    dhcp = None
    if s.get("dhcp") is not None:
        dhcp = DhcpService(
            daemon_up=s["dhcp"]["daemon_up"],
            subnets=[DhcpSubnet(**x) for x in s["dhcp"]["subnets"]],
        )
    services = ServiceState(
        dns=_opt(DnsService, s.get("dns")),
        http=_opt(HttpService, s.get("http")),
        dhcp=dhcp,
        lb=_opt(LbService, s.get("lb")),
    )
    interfaces = []
    for i in d["interfaces"]:
        i = dict(i)
        i["qdisc"] = Qdisc(**i["qdisc"])
        interfaces.append(Interface(**i))
    return Device(
        name=d["name"],
        kind=d["kind"],
        interfaces=interfaces,
        routing=routing,
        acl=acl,
        host_net=host_net,
        services=services,
        resources=ResourceState(**d["resources"]),
        crashed=d.get("crashed", False),
    )


def _topology_from_dict(data: dict[str, Any]) -> Topology:
    links = []
    for link in data["links"]:
        link = dict(link)
        link["a"] = tuple(link["a"])
        link["b"] = tuple(link["b"])
        links.append(Link(**link))
    return Topology(
        scenario_id=data["scenario_id"],
        scenario=data["scenario"],
        size_class=data["size_class"],
        seed=data["seed"],
        devices={k: _device_from_dict(v) for k, v in data["devices"].items()},
        links=links,
        manifest={k: dict(v) for k, v in data["manifest"].items()},
    )
