"""Fault index: routes confirmed symptoms to family skills."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .. import deepscan as D
from .. import faultlib as F
from ..netmodel import Topology
from ..probes import ToolCallLedger, run_probe

BROAD_SEARCH = "broad_search"
SYMPTOM_KINDS = ("reachability_loss", "reachability_unknown", "flag")
PHASE_RANK = {"1": 0, "A": 1, "B": 2, "C": 3, "D": 4}


@dataclass
class Symptom:
    kind: str
    phase: str
    devices: list[str]
    evidence: list[Any] = field(default_factory=list)
    family: Optional[str] = None
    hints: list[str] = field(default_factory=list)
    names: list[str] = field(default_factory=list)
    confirmed: bool = False
    checked: bool = False

    def sort_key(self) -> tuple:
        return (PHASE_RANK[self.phase], len(self.devices), self.devices[0] if self.devices else "")

    def describe(self) -> str:
        what = f"flag({self.family})" if self.kind == "flag" else self.kind
        return f"{what} on {','.join(self.devices) or '-'}"


@dataclass
class Routing:
    skill: str
    rule: str
    guard: list[str] = field(default_factory=list)
    hints: list[str] = field(default_factory=list)
    devices: list[str] = field(default_factory=list)


def symptoms_from_flags(flags: list[D.Flag]) -> list[Symptom]:
    """Merge flags by (phase, family), keeping flag order for hints."""
    merged: dict[tuple[str, str], Symptom] = {}
    for f in flags:
        key = (f.phase, f.family)
        s = merged.get(key)
        if s is None:
            s = merged[key] = Symptom("flag", f.phase, [], family=f.family)
        for d in (f.device, *f.suspects):
            if d not in s.devices:
                s.devices.append(d)
        if f.hint in F.FAMILY_OF and f.hint not in s.hints:
            s.hints.append(f.hint)
        s.evidence.append(f)
        for key_ in ("records",):
            for r in f.evidence.get(key_, []):
                if r.get("name") and r["name"] not in s.names:
                    s.names.append(r["name"])
    return list(merged.values())


def _guard_ospf_iface(s: Symptom, t: Topology, ledger: Optional[ToolCallLedger], log: list[str]) -> Optional[Routing]:
    """Empty neighbor table: a down interface points at the link layer instead."""
    if s.kind != "flag" or "ospf_neighbor_missing" not in s.hints:
        return None
    for device in s.devices:
        addrs = run_probe(t, device, "iface_addr", ledger)
        log.append(f"guard iface_addr on {device}")
        if addrs.responded and any(r["oper"] == "down" and r["addr"] for r in addrs.data["interfaces"]):
            return Routing("link", "ospf_neighbor_missing+iface_down", list(log), [], [device])
    return Routing("ospf", "ospf_neighbor_missing+iface_up", list(log), s.hints, s.devices)


def derive_from_suspects(s: Symptom, t: Topology, ledger: Optional[ToolCallLedger], log: list[str]) -> Optional[Symptom]:
    """Re-run sweeps on the suspects of a reachability symptom, phase by phase.

    Returns a flag symptom for the family of the first flag, or None.
    """
    for phase in D.PHASES:
        for sweep in D.SWEEPS[phase]:
            if sweep == "safe_reachability":
                continue
            flags = D.run_sweep(t, sweep, ledger, s.devices)
            log.append(f"guard {sweep} on {len(s.devices)} suspects: " + ("; ".join(f.render() for f in flags) or "clean"))
            if flags:
                family = flags[0].family
                derived = symptoms_from_flags([f for f in flags if f.family == family])[0]
                derived.confirmed = True
                derived.names = list(s.names)
                return derived
    return None


def _route_flag(s: Symptom, t: Topology, ledger: Optional[ToolCallLedger], log: list[str]) -> Optional[Routing]:
    if s.kind != "flag":
        return None
    return Routing(s.family, f"flag({s.family})", list(log), s.hints, s.devices)


GuardRule = Callable[[Symptom, Topology, Optional[ToolCallLedger], list[str]], Optional[Routing]]

# ordered: disambiguators first, then the family table lookup
RULES: tuple[tuple[str, GuardRule], ...] = (
    ("ospf_neighbor_missing: iface down -> link, else ospf", _guard_ospf_iface),
    ("flag(family) -> family skill", _route_flag),
)


def map_symptom(s: Symptom, t: Topology, ledger: Optional[ToolCallLedger] = None) -> Routing:
    """Run guard probes for the first applicable rule and name the skill.

    Reachability symptoms carry no family: sweeps restricted to their suspects
    turn them into a flag symptom first, which then goes through the rules.
    """
    if not s.confirmed:
        raise ValueError("only confirmed symptoms enter the fault index")
    log: list[str] = []
    if s.kind in ("reachability_loss", "reachability_unknown"):
        derived = derive_from_suspects(s, t, ledger, log)
        if derived is None:
            return Routing(BROAD_SEARCH, f"{s.kind}->no_local_flag", log)
        s = derived
    for _, rule in RULES:
        routing = rule(s, t, ledger, log)
        if routing is not None:
            if not routing.devices:
                routing.devices = list(s.devices)
            return routing
    return Routing(BROAD_SEARCH, "no rule", log)
