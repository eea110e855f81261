"""Skill execution: candidate selection, lazy probe plans, stop-and-submit."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from ..deepscan import path_target
from ..netmodel import Topology
from ..probes import ProbeResult, ToolCallLedger, ping_direct_ip, run_probe
from .loader import Fingerprint, Skill
from .predicates import REGISTRY, Context


def _names(ctx: Context, cache: "_Cache") -> list[str]:
    return list(ctx.names) or sorted(ctx.t.manifest)


def _dhcp_field(key: str) -> Callable[[Context, "_Cache"], list[str]]:
    def expand(ctx: Context, cache: "_Cache") -> list[str]:
        # the argument list depends on the server config, so fetch it first
        logs = cache.fetch(ctx.device, "dhcp_link_log", None)
        if not logs.responded or "server" not in logs.data:
            return []
        return sorted({s[key] for s in logs.data["server"]["subnets"]})
    return expand


def _web_url(ctx: Context, cache: "_Cache") -> list[str]:
    web = sorted(d.name for d in ctx.t.by_kind("web_server"))
    return [f"http://{web[0]}/"] if web else []


TEMPLATES: dict[str, Callable[[Context, "_Cache"], list[str]]] = {
    "{target}": lambda ctx, cache: [ip for ip in [path_target(ctx.t, ctx.device)] if ip],
    "{names}": _names,
    "{first_name}": lambda ctx, cache: _names(ctx, cache)[:1],
    "{web_url}": _web_url,
    "{self_url}": lambda ctx, cache: [f"http://{ctx.device}/"],
    "{dhcp_gateways}": _dhcp_field("gateway"),
    "{dhcp_resolvers}": _dhcp_field("dns"),
}


class _Cache:
    """Per-execution probe cache; each miss is one ledger charge."""

    def __init__(self, t: Topology, ledger: Optional[ToolCallLedger]):
        self.t = t
        self.ledger = ledger
        self._store: dict[tuple[str, str, Optional[str]], ProbeResult] = {}
        self.last_index: Optional[int] = None

    def get(self, device: str, kind: str, arg: Optional[str]) -> Optional[ProbeResult]:
        return self._store.get((device, kind, arg))

    def fetch(self, device: str, kind: str, arg: Optional[str]) -> ProbeResult:
        key = (device, kind, arg)
        if key in self._store:
            return self._store[key]
        if kind == "ping":
            entry = ping_direct_ip(self.t, device, arg, self.ledger)
            result = ProbeResult("ping", device, {"target": arg, "status": entry.status}, arg=arg)
        else:
            result = run_probe(self.t, device, kind, self.ledger, arg)
        if self.ledger is not None:
            self.last_index = self.ledger.count - 1
        self._store[key] = result
        return result


@dataclass
class Match:
    label: str
    devices: frozenset[str]
    evidence: list[str]
    decisive_index: Optional[int]
    skill: str


@dataclass
class Attempt:
    label: str
    candidates: list[str]
    matched: Optional[str] = None
    via: str = ""
    probes: int = 0


@dataclass
class Execution:
    skill: str
    match: Optional[Match] = None
    attempts: list[Attempt] = field(default_factory=list)
    aborted: bool = False


def candidates(skill: Skill, t: Topology, named: list[str]) -> list[str]:
    """Devices named by the symptom, else every device of the skill's classes."""
    classes = set(skill.candidates)
    picked = sorted({n for n in named if n in t.devices and t.devices[n].kind in classes})
    if picked:
        return picked
    return [d.name for d in t.by_kind(*classes)]


def _evaluate(fp: Fingerprint, ctx: Context, cache: _Cache) -> tuple[bool, list[str]]:
    """Lazily run the plan clause by clause; stop at the first failing clause."""
    evidence = []
    for clause in fp.clauses:
        if clause.kind not in ctx.fetched:
            results = []
            for step in fp.steps:
                if step.kind != clause.kind:
                    continue
                args = TEMPLATES[step.template](ctx, cache) if step.template else [None]
                results += [cache.fetch(ctx.device, step.kind, a) for a in args]
            ctx.fetched[clause.kind] = results
        if not REGISTRY[clause.predicate](ctx.fetched[clause.kind], dict(clause.params), ctx):
            return False, evidence
        evidence.append(f"{ctx.device}: {clause.render()}")
    return True, evidence


def _ordered(fps: list[Fingerprint], hints: list[str]) -> list[Fingerprint]:
    first = [fp for h in hints for fp in fps if fp.label == h]
    return first + [fp for fp in fps if fp not in first]


def execute_skill(skill: Skill, t: Topology, named: list[str], ledger: Optional[ToolCallLedger] = None,
                  hints: Optional[list[str]] = None, names: Optional[list[str]] = None,
                  bank: Optional[dict[str, Skill]] = None,
                  on_attempt: Optional[Callable[[Attempt], bool]] = None) -> Execution:
    """Try fingerprints (hinted first) over candidates; return the first full match.

    ``on_attempt`` is called before each fingerprint attempt and may refuse
    it (turn budget exhausted), which aborts the execution.
    """
    cache = _Cache(t, ledger)
    execution = Execution(skill.id)
    fps = list(skill.fingerprints)
    if bank is not None:
        for label, owner in skill.delegates.items():
            fps += [fp for fp in bank[owner].fingerprints if fp.label == label]
    cands = candidates(skill, t, named)
    for fp in _ordered(fps, hints or []):
        attempt = Attempt(fp.label, cands)
        if on_attempt is not None and not on_attempt(attempt):
            execution.aborted = True
            return execution
        execution.attempts.append(attempt)
        before = ledger.count if ledger else 0
        for device in cands:
            ctx = Context(t, device, list(names or []))
            ok, evidence = _evaluate(fp, ctx, cache)
            if ok:
                attempt.matched = device
                attempt.via = ", ".join(c.kind for c in fp.clauses)
                attempt.probes = (ledger.count if ledger else 0) - before
                execution.match = Match(fp.label, frozenset({device}), evidence, cache.last_index, skill.id)
                return execution
        attempt.probes = (ledger.count if ledger else 0) - before
    return execution


def canonicalize(match: Match) -> dict:
    """Submission fragment for a fingerprint match."""
    assert match.devices, "a fingerprint match always localizes at least one device"
    return {"labels": [match.label], "devices": sorted(match.devices)}
