"""Turn-budgeted diagnosis loop.

One turn is one decision point: the initial scan, each deep-scan phase, each
index routing, each fingerprint attempt and the final submission.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

from . import deepscan as D
from .netmodel import Topology
from .probes import ReachabilityEntry, ToolCallLedger, get_reachability, ping_direct_ip, run_probe
from .skills import BROAD_SEARCH, Skill, Symptom, canonicalize, execute_skill, load_default, map_symptom, symptoms_from_flags

DEFAULT_BUDGET = 20
FAILING = ("loss", "timeout", "refused", "unreachable")
TRACE_SAMPLES = 3
MAX_TRACE_HOPS = 12


@dataclass(frozen=True)
class Submission:
    is_anomaly: bool
    labels: frozenset[str] = frozenset()
    devices: frozenset[str] = frozenset()
    trace_ref: str = ""

    def __post_init__(self) -> None:
        if not self.is_anomaly and (self.labels or self.devices):
            raise ValueError("a no-anomaly submission carries no labels or devices")

    def to_dict(self) -> dict:
        return {"is_anomaly": self.is_anomaly, "labels": sorted(self.labels), "devices": sorted(self.devices)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "Submission":
        return cls(bool(d["is_anomaly"]), frozenset(d.get("labels", [])), frozenset(d.get("devices", [])),
                   d.get("trace_ref", ""))


@dataclass
class TraceEvent:
    turn: int
    step: str  # P1 | PA..PD | IDX | SK | SUBMIT
    text: str
    data: dict[str, Any] = field(default_factory=dict)

    def line(self) -> str:
        return f"T{self.turn:02d} {self.step}: {self.text}"


@dataclass
class SessionTrace:
    session_id: str
    budget: int
    ledger: ToolCallLedger = field(default_factory=ToolCallLedger)
    events: list[TraceEvent] = field(default_factory=list)
    turns_used: int = 0
    outcome: str = "no_submission"
    deep_phases: list[str] = field(default_factory=list)

    @property
    def tool_calls(self) -> int:
        return self.ledger.count

    def lines(self) -> list[str]:
        return [e.line() for e in self.events]

    def text(self) -> str:
        head = f"# session {self.session_id} budget={self.budget}"
        tail = f"# outcome={self.outcome} turns={self.turns_used} tool_calls={self.tool_calls}"
        return "\n".join([head, *self.lines(), tail]) + "\n"

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "budget": self.budget,
            "turns_used": self.turns_used,
            "outcome": self.outcome,
            "tool_calls": self.tool_calls,
            "deep_phases": list(self.deep_phases),
            "events": [asdict(e) for e in self.events],
            "ledger": [list(e) for e in self.ledger.entries],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, default=str)


class OutOfTurns(Exception):
    pass


# -- step 1 ----------------------------------------------------------------


def _trace(t: Topology, src: str, dst_ip: str, ledger: Optional[ToolCallLedger]) -> list[str]:
    """Hop list from route_get next hops (a traceroute stand-in)."""
    hops = [src]
    cur = src
    for _ in range(MAX_TRACE_HOPS):
        r = run_probe(t, cur, "route_get", ledger, dst_ip)
        if not r.responded or "error" in r.data or r.data.get("kind") != "via":
            break
        nxt = r.data.get("next_hop_device")
        if nxt is None or nxt in hops:
            break
        hops.append(nxt)
        cur = nxt
    return hops


def _suspects(entries: list[ReachabilityEntry], t: Topology, ledger: Optional[ToolCallLedger]) -> list[str]:
    counts = Counter()
    for e in entries:
        counts[e.source] += 1
        counts[e.destination] += 1
    top = max(counts.values())
    endpoints = {n for n, c in counts.items() if c == top}
    paths = []
    for e in entries[:TRACE_SAMPLES]:
        hops = set()
        if e.dest_ip:
            hops |= set(_trace(t, e.source, e.dest_ip, ledger))
        back = t.manifest.get(e.source, {}).get("ip")
        if back and e.destination in t.devices:
            hops |= set(_trace(t, e.destination, back, ledger))
        paths.append(hops)
    shared = set.intersection(*paths) if paths else set()
    on_path = shared or set().union(*paths)
    return sorted(endpoints | on_path)


def extract_symptoms(entries: list[ReachabilityEntry], t: Topology,
                     ledger: Optional[ToolCallLedger] = None) -> list[Symptom]:
    """Candidate symptoms from a reachability matrix.

    Unknown entries get direct-IP re-probes: success means a resolver fault,
    failure folds the entry into the path-failure symptom.
    """
    failing = [e for e in entries if e.status in FAILING]
    unknown = [e for e in entries if e.status == "unknown"]
    out = []
    if unknown:
        samples = [unknown[0]]
        for e in unknown[1:]:
            if len(samples) == TRACE_SAMPLES:
                break
            if all(e.source != s.source for s in samples) or all(e.destination != s.destination for s in samples):
                samples.append(e)
        direct_ok = all(
            e.dest_ip is not None and ping_direct_ip(t, e.source, e.dest_ip, ledger).status in ("ok", "loss")
            for e in samples
        )
        if direct_ok:
            sources = Counter(e.source for e in unknown)
            top = max(sources.values())
            devices = {s for s, c in sources.items() if c == top}
            first = min(devices)
            ns = run_probe(t, first, "resolver_config", ledger)
            by_ip = {v["ip"]: k for k, v in t.manifest.items()}
            if ns.responded:
                devices |= {by_ip[ip] for ip in ns.data["nameservers"] if ip in by_ip}
            names = sorted({e.destination for e in unknown})
            out.append(Symptom("reachability_unknown", "1", sorted(devices), list(unknown), names=names))
        else:
            failing = failing + unknown
    if failing:
        out.append(Symptom("reachability_loss", "1", _suspects(failing, t, ledger), list(failing)))
    return out


def confirm(symptoms: list[Symptom], t: Topology, ledger: Optional[ToolCallLedger] = None) -> list[Symptom]:
    """Re-probe each symptom's decisive evidence once; keep those that reproduce."""
    kept = []
    for s in symptoms:
        if s.confirmed:
            kept.append(s)
            continue
        ok = False
        if s.kind == "flag":
            ok = any(D.recheck(t, f, ledger) for f in s.evidence[:1])
        elif s.kind == "reachability_loss":
            e = s.evidence[0]
            target = e.dest_ip or t.manifest.get(e.destination, {}).get("ip")
            ok = target is not None and ping_direct_ip(t, e.source, target, ledger).status != "ok"
        elif s.kind == "reachability_unknown":
            e = s.evidence[0]
            r = run_probe(t, e.source, "dns_lookup", ledger, e.destination)
            ok = not r.responded or r.data.get("answer") is None
        if ok:
            s.confirmed = True
            kept.append(s)
    return kept


# -- session ---------------------------------------------------------------


class _Session:
    def __init__(self, t: Topology, budget: int, bank: dict[str, Skill], session_id: str):
        self.t = t
        self.bank = bank
        self.trace = SessionTrace(session_id, budget)
        self.ledger = self.trace.ledger
        self.next_phase = 0
        self.symptoms: list[Symptom] = []

    def turn(self) -> int:
        tr = self.trace
        if tr.turns_used >= tr.budget:
            raise OutOfTurns
        self.ledger.tick = tr.turns_used
        tr.turns_used += 1
        return tr.turns_used

    def log(self, turn: int, step: str, text: str, **data) -> None:
        self.trace.events.append(TraceEvent(turn, step, text, data))

    @property
    def deep_done(self) -> bool:
        return self.next_phase >= len(D.PHASES)

    def initial_scan(self) -> None:
        turn = self.turn()
        entries = get_reachability(self.t, self.ledger)
        bad = [e for e in entries if e.status != "ok"]
        loss = sum(1 for e in entries if e.status == "loss")
        self.log(turn, "P1", f"get_reachability: {len(entries) - len(bad)}/{len(entries)} ok"
                 + (f", {len(bad)} failing" if bad else ", 0% loss"),
                 pairs=len(entries), failing=len(bad), loss=loss)
        found = confirm(extract_symptoms(entries, self.t, self.ledger), self.t, self.ledger)
        for s in found:
            self.log(turn, "P1", f"symptom {s.describe()}", kind=s.kind, devices=s.devices, names=s.names)
        self.symptoms += found

    def deep_scan(self) -> None:
        """Resume the deep scan; stop after the first phase with a confirmed flag."""
        while not self.deep_done:
            phase = D.PHASES[self.next_phase]
            turn = self.turn()
            self.next_phase += 1
            self.trace.deep_phases.append(phase)
            report = D.run_phase(self.t, phase, self.ledger)
            for line, sweep in zip(report.trace_lines(), report.sweeps_run):
                flags = [f.render() for f in report.flags if f.check == sweep]
                self.log(turn, f"P{phase}", line.split(": ", 1)[1], sweep=sweep, flags=flags)
            if report.clean:
                continue
            found = confirm(symptoms_from_flags(report.flags), self.t, self.ledger)
            self.symptoms += found
            if found:
                return

    def submit(self, sub: Submission) -> Submission:
        turn = self.turn()
        if sub.is_anomaly:
            text = f"{','.join(sorted(sub.labels))} / {','.join(sorted(sub.devices))}"
        else:
            text = "no anomaly"
        self.log(turn, "SUBMIT", text, **sub.to_dict())
        self.trace.outcome = "submitted"
        return sub

    def run(self) -> Submission:
        self.initial_scan()
        if not self.symptoms:
            self.deep_scan()
        while True:
            pending = [s for s in self.symptoms if not s.checked]
            if not pending:
                if not self.deep_done:
                    self.deep_scan()
                    continue
                return self.submit(Submission(False, trace_ref=self.trace.session_id))
            lead = min(pending, key=Symptom.sort_key)
            turn = self.turn()
            routing = map_symptom(lead, self.t, self.ledger)
            self.log(turn, "IDX", f"{lead.describe()} -> {routing.skill} [{routing.rule}]",
                     skill=routing.skill, guard=routing.guard, devices=routing.devices)
            if routing.skill == BROAD_SEARCH:
                lead.checked = True
                continue
            skill = self.bank[routing.skill]
            start = self.ledger.count
            turns: list[int] = []

            def on_attempt(_attempt) -> bool:
                try:
                    turns.append(self.turn())
                    return True
                except OutOfTurns:
                    return False

            execution = execute_skill(skill, self.t, routing.devices, self.ledger, routing.hints,
                                      lead.names, self.bank, on_attempt)
            for turn_no, attempt in zip(turns, execution.attempts):
                verdict = f"match on {attempt.matched} ({attempt.via})" if attempt.matched else "no match"
                self.log(turn_no, "SK", f"{skill.id}: {attempt.label} over {len(attempt.candidates)} candidates: {verdict}",
                         skill=skill.id, label=attempt.label, matched=attempt.matched, via=attempt.via,
                         probes=attempt.probes)
            if execution.aborted:
                raise OutOfTurns
            if execution.match is not None:
                m = execution.match
                self.log(turns[-1], "SK", f"{skill.id}: stop on {m.label}; evidence " + "; ".join(m.evidence),
                         skill=skill.id, label=m.label, decisive_index=m.decisive_index,
                         ledger_start=start, ledger_end=self.ledger.count)
                frag = canonicalize(m)
                return self.submit(Submission(True, frozenset(frag["labels"]), frozenset(frag["devices"]),
                                              self.trace.session_id))
            lead.checked = True


_DEFAULT_BANK: Optional[dict[str, Skill]] = None


def default_bank() -> dict[str, Skill]:
    global _DEFAULT_BANK
    if _DEFAULT_BANK is None:
        _DEFAULT_BANK = load_default()
    return _DEFAULT_BANK


def diagnose(t: Topology, budget: int = DEFAULT_BUDGET, bank: Optional[dict[str, Skill]] = None,
             session_id: Optional[str] = None) -> tuple[Optional[Submission], SessionTrace]:
    """Diagnose one incident view; returns (submission or None, trace)."""
    if budget < 1:
        raise ValueError("budget must be at least 1")
    session = _Session(t, budget, bank or default_bank(), session_id or t.scenario_id)
    try:
        return session.run(), session.trace
    except OutOfTurns:
        session.trace.outcome = "no_submission"
        return None, session.trace
