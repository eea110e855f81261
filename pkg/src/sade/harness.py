"""Benchmark grid, scoring, aggregation and reports."""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional

from . import faultlib as F
from .engine import DEFAULT_BUDGET, SessionTrace, Submission, diagnose
from .faultlib import GridCell, GroundTruth, Incident
from .netmodel import Topology, build_scenario
from .netmodel.model import SCENARIO_CLASSES, SIZE_CLASSES

log = logging.getLogger(__name__)

Injector = Callable[[Topology, str, str, int], tuple[Topology, GroundTruth]]


# -- grid ------------------------------------------------------------------


@dataclass(frozen=True)
class GridFilter:
    scenarios: Optional[frozenset[str]] = None
    sizes: Optional[frozenset[str]] = None
    families: Optional[frozenset[str]] = None
    labels: Optional[frozenset[str]] = None
    benign: bool = True

    @classmethod
    def parse(cls, specs: Iterable[str]) -> "GridFilter":
        """``key=v1,v2`` items; keys: scenario, size, family, label, benign (yes/no)."""
        got: dict[str, frozenset[str]] = {}
        benign: Optional[bool] = None
        for spec in specs:
            key, eq, value = spec.partition("=")
            if not eq:
                raise ValueError(f"filter needs key=value: {spec!r}")
            values = frozenset(v for v in value.split(",") if v)
            if key == "benign":
                benign = value in ("yes", "true", "1")
            elif key in ("scenario", "size", "family", "label"):
                got[key] = values
            else:
                raise ValueError(f"unknown filter key {key!r}")
        if benign is None:
            # a family or label filter selects fault cells only unless benign=yes is given
            benign = "family" not in got and "label" not in got
        return cls(got.get("scenario"), got.get("size"), got.get("family"), got.get("label"), benign)

    def keeps(self, scenario: str, size: str, label: Optional[str]) -> bool:
        if self.scenarios is not None and scenario not in self.scenarios:
            return False
        if self.sizes is not None and size not in self.sizes:
            return False
        if label is None:
            return self.benign
        if self.families is not None and F.FAMILY_OF[label] not in self.families:
            return False
        return self.labels is None or label in self.labels


def grid(seeds: Iterable[int] = (0,), flt: Optional[GridFilter] = None) -> list[GridCell]:
    """Every injectable (scenario, size, label, seed) cell plus one benign cell per (scenario, size, seed).

    The target is ``targets[seed % len(targets)]``; labels with no target in a
    scenario class are not part of the grid.
    """
    flt = flt or GridFilter()
    cells = []
    for scenario in SCENARIO_CLASSES:
        for size in SIZE_CLASSES:
            for seed in seeds:
                if not flt.keeps(scenario, size, None) and not any(flt.keeps(scenario, size, l) for l in F.LABELS):
                    continue
                t = build_scenario(scenario, size, seed)
                if flt.keeps(scenario, size, None):
                    cells.append(GridCell(scenario, size, None, None, seed))
                for label in F.LABELS:
                    if not flt.keeps(scenario, size, label):
                        continue
                    targets = F.enumerate_targets(t, label)
                    if targets:
                        cells.append(GridCell(scenario, size, label, targets[seed % len(targets)], seed))
    return cells


def materialize(cell: GridCell, injector: Optional[Injector] = None) -> GridCell:
    """Build, inject and verify one cell; failures mark it excluded with a reason."""
    t = build_scenario(cell.scenario, cell.size, cell.seed)
    iid = F.incident_id(cell.scenario, cell.size, cell.seed, cell.label, cell.target)
    if cell.label is None:
        faulty, truth = t, F.BENIGN
    else:
        try:
            faulty, truth = (injector or F.inject)(t, cell.label, cell.target, cell.seed)
        except Exception as exc:  # any injector failure excludes the cell, never the run
            cell.excluded, cell.note = True, f"injection failed: {exc}"
            log.warning("excluded %s: %s", iid, cell.note)
            return cell
    verdict = F.verify_injection(faulty, truth)
    if not verdict.verified:
        cell.excluded, cell.note = True, str(verdict)
        log.warning("excluded %s: %s", iid, cell.note)
        return cell
    cell.incident = Incident(iid, faulty, truth, cell.seed, cell.label, cell.target)
    return cell


# -- scoring ---------------------------------------------------------------


def set_prf(pred: frozenset[str], truth: frozenset[str]) -> tuple[float, float, float]:
    """Set precision, recall and F1; both empty counts as a perfect match."""
    hit = len(pred & truth)
    precision = hit / len(pred) if pred else (1.0 if not truth else 0.0)
    recall = hit / len(truth) if truth else (1.0 if not pred else 0.0)
    # one integer division keeps F1 correctly rounded (2pr/(p+r) drifts by an ulp)
    f1 = 2 * hit / (len(pred) + len(truth)) if pred or truth else 1.0
    return precision, recall, f1


@dataclass
class IncidentResult:
    incident_id: str
    scenario: str
    size: str
    label: Optional[str]
    family: Optional[str]
    truth: GroundTruth
    submission: Optional[Submission]
    detection_correct: bool
    rca_precision: float
    rca_recall: float
    rca_f1: float
    device_match: bool
    turns: int = 0
    tool_calls: int = 0
    outcome: str = "no_submission"
    phase1_visible: bool = False
    deep_phases: list[str] = field(default_factory=list)

    @property
    def benign(self) -> bool:
        return not self.truth.is_anomaly

    @property
    def correct(self) -> bool:
        return self.detection_correct and self.rca_f1 == 1.0

    def to_dict(self) -> dict:
        return {
            "incident_id": self.incident_id,
            "scenario": self.scenario,
            "size": self.size,
            "label": self.label,
            "family": self.family,
            "truth": self.truth.to_dict(),
            "submission": self.submission.to_dict() if self.submission else None,
            "detection_correct": self.detection_correct,
            "rca_precision": self.rca_precision,
            "rca_recall": self.rca_recall,
            "rca_f1": self.rca_f1,
            "device_match": self.device_match,
            "turns": self.turns,
            "tool_calls": self.tool_calls,
            "outcome": self.outcome,
            "phase1_visible": self.phase1_visible,
            "deep_phases": self.deep_phases,
        }


def score(sub: Optional[Submission], truth: GroundTruth) -> dict:
    """Detection and set-F1 fields for one incident; no submission scores F1 = 0."""
    if sub is None:
        return {"detection_correct": False, "rca_precision": 0.0, "rca_recall": 0.0, "rca_f1": 0.0,
                "device_match": False}
    p, r, f1 = set_prf(frozenset(sub.labels), frozenset(truth.labels))
    return {
        "detection_correct": sub.is_anomaly == truth.is_anomaly,
        "rca_precision": p,
        "rca_recall": r,
        "rca_f1": f1,
        "device_match": frozenset(sub.devices) == frozenset(truth.devices),
    }


def result_for(incident: Incident, sub: Optional[Submission], trace: SessionTrace) -> IncidentResult:
    return IncidentResult(
        incident.incident_id, incident.scenario, incident.size, incident.label,
        F.FAMILY_OF.get(incident.label) if incident.label else None,
        incident.truth, sub, **score(sub, incident.truth),
        turns=trace.turns_used, tool_calls=trace.tool_calls, outcome=trace.outcome,
        phase1_visible=any(e.step == "P1" and e.text.startswith("symptom") for e in trace.events),
        deep_phases=list(trace.deep_phases),
    )


# -- running ---------------------------------------------------------------


@dataclass
class GridRun:
    results: list[IncidentResult]
    excluded: list[GridCell]
    traces: dict[str, SessionTrace] = field(default_factory=dict)


def _session(args: tuple[Topology, int, str]) -> tuple[Optional[Submission], SessionTrace]:
    t, budget, sid = args
    return diagnose(t, budget, session_id=sid)


def run_cells(cells: list[GridCell], budget: int = DEFAULT_BUDGET, workers: int = 1) -> list[tuple[Incident, Optional[Submission], SessionTrace]]:
    """Diagnose materialized cells; output order follows input order."""
    jobs = [(c.incident.topology, budget, c.incident.incident_id) for c in cells]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(_session, jobs, chunksize=4))
    else:
        outs = [_session(j) for j in jobs]
    return [(c.incident, sub, tr) for c, (sub, tr) in zip(cells, outs)]


def run_grid(cells: list[GridCell], budget: int = DEFAULT_BUDGET, injector: Optional[Injector] = None,
             workers: int = 1, keep_traces: bool = False) -> GridRun:
    """Verify every cell, diagnose the verified ones, score them.

    Results are sorted by incident id so repeated runs compare byte-for-byte.
    """
    ready, excluded = [], []
    for cell in cells:
        materialize(cell, injector)
        (excluded if cell.excluded else ready).append(cell)
    results, traces = [], {}
    for incident, sub, trace in run_cells(ready, budget, workers):
        results.append(result_for(incident, sub, trace))
        if keep_traces:
            traces[incident.incident_id] = trace
    results.sort(key=lambda r: r.incident_id)
    return GridRun(results, excluded, traces)


# -- aggregation -----------------------------------------------------------


@dataclass
class Stats:
    """Sufficient statistics; merging partitions gives the same metrics as one pass."""

    n: int = 0
    detected: int = 0
    no_submission: int = 0
    tool_calls: int = 0
    correct: int = 0
    faults: int = 0
    fault_f1_sum: float = 0.0
    benign: int = 0
    benign_f1_sum: float = 0.0
    device_match: int = 0
    micro_hit: int = 0
    micro_pred: int = 0
    micro_truth: int = 0

    def add(self, r: IncidentResult) -> "Stats":
        self.n += 1
        self.detected += r.detection_correct
        self.no_submission += r.outcome == "no_submission"
        self.tool_calls += r.tool_calls
        self.correct += r.correct
        if r.benign:
            self.benign += 1
            self.benign_f1_sum += r.rca_f1
        else:
            self.faults += 1
            self.fault_f1_sum += r.rca_f1
            self.device_match += r.device_match
            pred = frozenset(r.submission.labels) if r.submission else frozenset()
            self.micro_hit += len(pred & r.truth.labels)
            self.micro_pred += len(pred)
            self.micro_truth += len(r.truth.labels)
        return self

    def merge(self, other: "Stats") -> "Stats":
        return Stats(*(getattr(self, k) + getattr(other, k) for k in self.__dataclass_fields__))

    def metrics(self) -> dict:
        def ratio(a, b):
            return a / b if b else None

        p = ratio(self.micro_hit, self.micro_pred)
        r = ratio(self.micro_hit, self.micro_truth)
        micro = None if p is None or r is None else (0.0 if p + r == 0 else 2 * p * r / (p + r))
        return {
            "incidents": self.n,
            "detection_accuracy": ratio(self.detected, self.n),
            "mean_rca_f1": ratio(self.fault_f1_sum, self.faults),
            "micro_rca_f1": micro,
            "benign_f1": ratio(self.benign_f1_sum, self.benign),
            "device_match_rate": ratio(self.device_match, self.faults),
            "no_submission_rate": ratio(self.no_submission, self.n),
            "mean_tool_calls": ratio(self.tool_calls, self.n),
            "tool_calls_per_correct": ratio(self.tool_calls, self.correct),
            "correct": self.correct,
            "tool_calls": self.tool_calls,
        }


def stats_of(results: Iterable[IncidentResult]) -> Stats:
    s = Stats()
    for r in results:
        s.add(r)
    return s


def aggregate(results: list[IncidentResult]) -> dict:
    """Headline metrics plus per-family, per-size and per-scenario breakdowns."""
    out = stats_of(results).metrics()
    for key, attr in (("per_family", "family"), ("per_size", "size"), ("per_scenario", "scenario")):
        groups: dict[str, Stats] = {}
        for r in results:
            name = getattr(r, attr) or "benign"
            groups.setdefault(name, Stats()).add(r)
        out[key] = {k: groups[k].metrics() for k in sorted(groups)}
    visible = [r for r in results if not r.benign and r.phase1_visible]
    hidden = [r for r in results if not r.benign and not r.phase1_visible]
    out["phase1_visible"] = stats_of(visible).metrics()
    out["deep_scan_only"] = stats_of(hidden).metrics()
    return out


# -- reports ---------------------------------------------------------------


BREAKDOWN_COLUMNS = ("incidents", "detection_accuracy", "mean_rca_f1", "device_match_rate",
                     "no_submission_rate", "mean_tool_calls", "tool_calls_per_correct")


def _fmt(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def render_csv(metrics: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("breakdown", "group", *BREAKDOWN_COLUMNS))
    w.writerow(("all", "all", *(_fmt(metrics[c]) for c in BREAKDOWN_COLUMNS)))
    for key in ("per_scenario", "per_size", "per_family"):
        for group, m in metrics[key].items():
            w.writerow((key, group, *(_fmt(m[c]) for c in BREAKDOWN_COLUMNS)))
    return buf.getvalue()


def render_text(metrics: dict, excluded: Iterable[GridCell] = ()) -> str:
    lines = [
        f"incidents            {metrics['incidents']}",
        f"detection_accuracy   {_fmt(metrics['detection_accuracy'])}",
        f"mean_rca_f1          {_fmt(metrics['mean_rca_f1'])}",
        f"micro_rca_f1         {_fmt(metrics['micro_rca_f1'])}",
        f"benign_f1            {_fmt(metrics['benign_f1'])}",
        f"device_match_rate    {_fmt(metrics['device_match_rate'])}",
        f"no_submission_rate   {_fmt(metrics['no_submission_rate'])}",
        f"mean_tool_calls      {_fmt(metrics['mean_tool_calls'])}",
        f"tool_calls/correct   {_fmt(metrics['tool_calls_per_correct'])}",
        f"calls phase1-visible {_fmt(metrics['phase1_visible']['mean_tool_calls'])}",
        f"calls deep-scan-only {_fmt(metrics['deep_scan_only']['mean_tool_calls'])}",
    ]
    excluded = list(excluded)
    if excluded:
        lines.append(f"excluded cells       {len(excluded)}")
        for c in excluded:
            lines.append(f"  {F.incident_id(c.scenario, c.size, c.seed, c.label, c.target)}: {c.note}")
    return "\n".join(lines) + "\n"


def report(metrics: dict, results: list[IncidentResult], out: Path, formats: Iterable[str] = ("json", "csv", "text"),
           excluded: Iterable[GridCell] = ()) -> list[Path]:
    """Write results JSONL plus the requested metric formats into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    written = []
    path = out / "results.jsonl"
    path.write_text("".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in results))
    written.append(path)
    excluded = list(excluded)
    for fmt in formats:
        if fmt == "json":
            path = out / "metrics.json"
            body = dict(metrics, excluded=[
                {"incident_id": F.incident_id(c.scenario, c.size, c.seed, c.label, c.target), "reason": c.note}
                for c in excluded])
            path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
        elif fmt == "csv":
            path = out / "breakdown.csv"
            path.write_text(render_csv(metrics))
        elif fmt == "text":
            path = out / "summary.txt"
            path.write_text(render_text(metrics, excluded))
        else:
            raise ValueError(f"unknown report format {fmt!r}")
        written.append(path)
    return written


# -- invariant checks (bench --check) -----------------------------------------


def check_invariants(run: GridRun, budget: int = DEFAULT_BUDGET) -> list[str]:
    """Human-readable violations of the trace invariants; empty when all hold."""
    problems = []
    order = {p: i for i, p in enumerate(("P1", "PA", "PB", "PC", "PD"))}
    for iid, tr in run.traces.items():
        if tr.turns_used > budget:
            problems.append(f"{iid}: {tr.turns_used} turns > {budget}")
        phases = [e.step for e in tr.events if e.step in order]
        if [order[p] for p in phases] != sorted(order[p] for p in phases):
            problems.append(f"{iid}: phases out of order {phases}")
        problems += [f"{iid}: {p}" for p in stop_and_submit_violations(tr)]
        sub = [e for e in tr.events if e.step == "SUBMIT"]
        if sub and not sub[-1].data["is_anomaly"] and len(tr.deep_phases) != 4:
            problems.append(f"{iid}: no-anomaly without a completed deep scan")
    for r in run.results:
        if not r.correct:
            problems.append(f"{r.incident_id}: incorrect (f1={r.rca_f1}, outcome={r.outcome})")
    return problems


def stop_and_submit_violations(tr: SessionTrace) -> list[str]:
    """A skill match must be the last ledger entry of its execution."""
    out = []
    for e in tr.events:
        if e.step == "SK" and "decisive_index" in e.data:
            if e.data["decisive_index"] is None or e.data["decisive_index"] != e.data["ledger_end"] - 1:
                out.append(f"ledger entries after decisive probe in {e.data['skill']}")
    return out
