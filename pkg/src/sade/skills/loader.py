"""Parser and validator for declarative ``.skill`` files.

Grammar (one directive per line, ``#`` starts a comment)::

    skill <id>
    family <family>
    candidates <device-kind> [<device-kind> ...]
    escalation <free text>
    mode <free text>                 # failure mode description, repeatable
    signal <free text>               # observable signal, repeatable
    fingerprint <label>
      probe <probe-kind> [<arg-template>]
      require <probe-kind> <predicate> [key=value ...]
    delegate <label> <skill-id>
    stop first_match

Indentation is cosmetic. ``probe`` and ``require`` lines attach to the most
recent ``fingerprint``. Argument templates are resolved at execution time
(see ``bank.TEMPLATES``).
"""

from __future__ import annotations

import shlex
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

from .. import faultlib as F
from ..probes import PROBE_KINDS
from .predicates import REGISTRY

PSEUDO_PROBES = ("ping",)
DEVICE_CLASSES = ("host", "router", "dns_pod", "dhcp_server", "web_server", "load_balancer")


class SkillError(ValueError):
    pass


@dataclass(frozen=True)
class Step:
    kind: str
    template: Optional[str] = None


@dataclass(frozen=True)
class Clause:
    kind: str
    predicate: str
    params: tuple[tuple[str, str], ...] = ()

    def render(self) -> str:
        extra = " ".join(f"{k}={v}" for k, v in self.params)
        return f"{self.kind} {self.predicate}" + (f" {extra}" if extra else "")


@dataclass
class Fingerprint:
    label: str
    steps: list[Step] = field(default_factory=list)
    clauses: list[Clause] = field(default_factory=list)


@dataclass
class Skill:
    id: str
    family: str
    candidates: tuple[str, ...] = ()
    escalation: str = "return to index"
    modes: list[str] = field(default_factory=list)
    signals: list[str] = field(default_factory=list)
    fingerprints: list[Fingerprint] = field(default_factory=list)
    delegates: dict[str, str] = field(default_factory=dict)
    stop: str = "first_match"

    @property
    def labels(self) -> list[str]:
        return [fp.label for fp in self.fingerprints]


def parse_skill(text: str, origin: str = "<string>") -> Skill:
    skill: Optional[Skill] = None
    current: Optional[Fingerprint] = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, _, rest = line.partition(" ")
        rest = rest.strip()
        where = f"{origin}:{lineno}"
        if head == "skill":
            if skill is not None:
                raise SkillError(f"{where}: second skill header")
            skill = Skill(id=rest, family="")
            continue
        if skill is None:
            raise SkillError(f"{where}: directive before skill header")
        if head == "family":
            skill.family = rest
        elif head == "candidates":
            skill.candidates = tuple(rest.split())
        elif head == "escalation":
            skill.escalation = rest
        elif head == "mode":
            skill.modes.append(rest)
        elif head == "signal":
            skill.signals.append(rest)
        elif head == "fingerprint":
            current = Fingerprint(rest)
            skill.fingerprints.append(current)
        elif head == "probe":
            if current is None:
                raise SkillError(f"{where}: probe outside fingerprint")
            parts = rest.split()
            current.steps.append(Step(parts[0], parts[1] if len(parts) > 1 else None))
        elif head == "require":
            if current is None:
                raise SkillError(f"{where}: require outside fingerprint")
            parts = shlex.split(rest)
            if len(parts) < 2:
                raise SkillError(f"{where}: require needs <probe-kind> <predicate>")
            params = []
            for p in parts[2:]:
                key, eq, value = p.partition("=")
                if not eq:
                    raise SkillError(f"{where}: bad parameter {p!r}")
                params.append((key, value))
            current.clauses.append(Clause(parts[0], parts[1], tuple(params)))
        elif head == "delegate":
            label, _, target = rest.partition(" ")
            skill.delegates[label.strip()] = target.strip()
        elif head == "stop":
            skill.stop = rest
        else:
            raise SkillError(f"{where}: unknown directive {head!r}")
    if skill is None:
        raise SkillError(f"{origin}: empty skill file")
    return skill


def _check_skill(skill: Skill) -> None:
    if skill.family not in F.FAMILIES:
        raise SkillError(f"{skill.id}: unknown family {skill.family!r}")
    if skill.stop != "first_match":
        raise SkillError(f"{skill.id}: unsupported stop condition {skill.stop!r}")
    for c in skill.candidates:
        if c not in DEVICE_CLASSES:
            raise SkillError(f"{skill.id}: unknown candidate class {c!r}")
    seen = set()
    for fp in skill.fingerprints:
        if fp.label not in F.FAMILY_OF:
            raise SkillError(f"{skill.id}: unknown label {fp.label!r}")
        if F.FAMILY_OF[fp.label] != skill.family:
            raise SkillError(f"{skill.id}: {fp.label} belongs to family {F.FAMILY_OF[fp.label]}")
        if fp.label in seen:
            raise SkillError(f"{skill.id}: two fingerprints for {fp.label}")
        seen.add(fp.label)
        if not fp.clauses:
            raise SkillError(f"{skill.id}/{fp.label}: fingerprint without clauses")
        planned = {s.kind for s in fp.steps}
        for s in fp.steps:
            if s.kind not in PROBE_KINDS and s.kind not in PSEUDO_PROBES:
                raise SkillError(f"{skill.id}/{fp.label}: unknown probe kind {s.kind!r}")
        for c in fp.clauses:
            if c.kind not in planned:
                raise SkillError(f"{skill.id}/{fp.label}: clause uses {c.kind} outside the probe plan")
            if c.predicate not in REGISTRY:
                raise SkillError(f"{skill.id}/{fp.label}: unknown predicate {c.predicate!r}")


def validate_bank(skills: Iterable[Skill]) -> dict[str, Skill]:
    """Check coverage: every catalog label owned by exactly one skill."""
    bank: dict[str, Skill] = {}
    owner: dict[str, str] = {}
    for skill in skills:
        _check_skill(skill)
        if skill.id in bank:
            raise SkillError(f"duplicate skill id {skill.id!r}")
        bank[skill.id] = skill
        for label in skill.labels:
            if label in owner:
                raise SkillError(f"{label} owned by both {owner[label]} and {skill.id}")
            owner[label] = skill.id
    unowned = sorted(set(F.LABELS) - set(owner))
    if unowned:
        raise SkillError(f"labels without an owning skill: {', '.join(unowned)}")
    for skill in bank.values():
        for label, target in skill.delegates.items():
            if owner.get(label) != target:
                raise SkillError(f"{skill.id}: delegate {label} -> {target}, but owner is {owner.get(label)}")
    return bank


def load_dir(path: Path) -> dict[str, Skill]:
    files = sorted(path.glob("*.skill"))
    return validate_bank(parse_skill(f.read_text(), f.name) for f in files)


def load_default() -> dict[str, Skill]:
    """The packaged skill bank."""
    base = resources.files("sade.skills") / "data"
    skills = []
    for entry in sorted(base.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".skill"):
            skills.append(parse_skill(entry.read_text(), entry.name))
    return validate_bank(skills)
