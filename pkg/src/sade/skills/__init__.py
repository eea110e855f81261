"""Fault index and the declarative skill bank."""

from .bank import Execution, Match, canonicalize, candidates, execute_skill
from .index import BROAD_SEARCH, Routing, Symptom, map_symptom, symptoms_from_flags
from .loader import Clause, Fingerprint, Skill, SkillError, load_default, load_dir, parse_skill, validate_bank

__all__ = [
    "BROAD_SEARCH",
    "Clause",
    "Execution",
    "Fingerprint",
    "Match",
    "Routing",
    "Skill",
    "SkillError",
    "Symptom",
    "canonicalize",
    "candidates",
    "execute_skill",
    "load_default",
    "load_dir",
    "map_symptom",
    "parse_skill",
    "symptoms_from_flags",
    "validate_bank",
]
