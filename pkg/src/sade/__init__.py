"""Symptom-aware diagnostic escalation over a simulated network."""

__version__ = "0.1.0"
