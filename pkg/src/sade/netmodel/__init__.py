"""Network model, scenario generators and deterministic convergence."""

from .converge import (
    BgpSession,
    ControlPlane,
    OspfAdjacency,
    Rib,
    RibEntry,
    Segments,
    arp_view,
    control_plane,
    converge,
)
from .model import *  # noqa: F401,F403
from .model import Topology, validate
from .scenarios import build_scenario

__all__ = [
    "BgpSession",
    "ControlPlane",
    "OspfAdjacency",
    "Rib",
    "RibEntry",
    "Segments",
    "Topology",
    "arp_view",
    "build_scenario",
    "control_plane",
    "converge",
    "validate",
]
