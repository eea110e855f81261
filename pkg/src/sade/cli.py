"""Command-line entry point: generate, inject, verify, diagnose, bench, score."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

from . import faultlib as F
from . import harness as H
from .engine import DEFAULT_BUDGET, Submission, diagnose
from .faultlib import GroundTruth, Incident
from .netmodel import Topology, build_scenario
from .netmodel.model import SCENARIO_CLASSES, SIZE_CLASSES


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def incident_to_json(inc: Incident) -> str:
    body = {"incident": inc.to_dict(), "truth": inc.truth.to_dict(), "topology": inc.topology.to_dict()}
    return json.dumps(body, sort_keys=True, indent=1) + "\n"


def incident_from_json(text: str) -> Incident:
    body = json.loads(text)
    meta = body["incident"]
    return Incident(meta["incident_id"], Topology.from_dict(body["topology"]), GroundTruth.from_dict(body["truth"]),
                    meta["seed"], meta.get("label"), meta.get("target"))


def _read_jsonl(path: str) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def cmd_generate(args) -> int:
    _emit(build_scenario(args.scenario, args.size, args.seed).to_json() + "\n", args.out)
    return 0


def cmd_inject(args) -> int:
    t = Topology.from_json(Path(args.topology).read_text())
    faulty, truth = F.inject(t, args.label, args.target, args.seed)
    iid = F.incident_id(t.scenario, t.size_class, t.seed, args.label, args.target)
    _emit(incident_to_json(Incident(iid, faulty, truth, t.seed, args.label, args.target)), args.out)
    return 0


def cmd_verify(args) -> int:
    inc = incident_from_json(Path(args.incident).read_text())
    verdict = F.verify_injection(inc.topology, inc.truth)
    print(f"{inc.incident_id}: {verdict}")
    return 0 if verdict.verified else 1


def cmd_diagnose(args) -> int:
    inc = incident_from_json(Path(args.incident).read_text())
    # the engine sees the topology only; truth stays in the file
    sub, trace = diagnose(inc.topology, args.budget, session_id=inc.incident_id)
    if args.trace:
        Path(args.trace).write_text(trace.text())
        Path(args.trace).with_suffix(".json").write_text(trace.to_json() + "\n")
    body = dict(sub.to_dict(), incident_id=inc.incident_id) if sub else {"incident_id": inc.incident_id,
                                                                        "outcome": "no_submission"}
    print(json.dumps(body, sort_keys=True))
    return 0


def cmd_bench(args) -> int:
    flt = H.GridFilter.parse(args.filter or [])
    cells = H.grid(seeds=args.seeds, flt=flt)
    run = H.run_grid(cells, args.budget, workers=args.workers, keep_traces=args.check or bool(args.out))
    metrics = H.aggregate(run.results)
    if args.out:
        out = Path(args.out)
        H.report(metrics, run.results, out, excluded=run.excluded)
        traces = out / "traces"
        traces.mkdir(exist_ok=True)
        for iid, tr in run.traces.items():
            (traces / f"{iid}.log").write_text(tr.text())
    sys.stdout.write(H.render_text(metrics, run.excluded))
    if args.check:
        problems = H.check_invariants(run, args.budget)
        for p in problems:
            print(f"FAIL {p}")
        print(f"check: {'ok' if not problems else f'{len(problems)} violation(s)'}")
        return 1 if problems else 0
    return 0


def cmd_score(args) -> int:
    """Submissions and truths are JSONL keyed by incident_id; a missing submission scores as none."""
    subs = {d["incident_id"]: d for d in _read_jsonl(args.submissions)}
    results = []
    for d in _read_jsonl(args.truths):
        iid = d["incident_id"]
        truth = GroundTruth.from_dict(d.get("truth", d))
        raw = subs.get(iid)
        sub = None if raw is None or "is_anomaly" not in raw else Submission.from_dict(raw)
        label = sorted(truth.labels)[0] if truth.labels else None
        results.append(H.IncidentResult(
            iid, d.get("scenario", ""), d.get("size", ""), label, F.FAMILY_OF.get(label) if label else None,
            truth, sub, **H.score(sub, truth), outcome="submitted" if sub else "no_submission"))
    metrics = H.aggregate(results)
    print(json.dumps({k: v for k, v in metrics.items() if not isinstance(v, dict)}, sort_keys=True, indent=1))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sade", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="build a healthy scenario topology (JSON)")
    g.add_argument("scenario", choices=SCENARIO_CLASSES)
    g.add_argument("size", choices=SIZE_CLASSES)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--out")
    g.set_defaults(func=cmd_generate)

    i = sub.add_parser("inject", help="inject one fault label into a topology file")
    i.add_argument("topology")
    i.add_argument("label", choices=F.LABELS)
    i.add_argument("target")
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("-o", "--out")
    i.set_defaults(func=cmd_inject)

    v = sub.add_parser("verify", help="check that an incident's fault manifests")
    v.add_argument("incident")
    v.set_defaults(func=cmd_verify)

    d = sub.add_parser("diagnose", help="run the engine on an incident file")
    d.add_argument("incident")
    d.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    d.add_argument("--trace", help="write the trace log here (and a .json twin)")
    d.set_defaults(func=cmd_diagnose)

    b = sub.add_parser("bench", help="run the benchmark grid")
    b.add_argument("--filter", action="append", metavar="KEY=V1,V2",
                   help="scenario=, size=, family=, label=, benign=yes|no (repeatable)")
    b.add_argument("--seeds", type=int, nargs="+", default=[0])
    b.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--out")
    b.add_argument("--check", action="store_true", help="exit nonzero if any trace invariant fails")
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("score", help="score submissions JSONL against truths JSONL")
    s.add_argument("submissions")
    s.add_argument("truths")
    s.set_defaults(func=cmd_score)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
