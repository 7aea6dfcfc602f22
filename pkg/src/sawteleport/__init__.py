"""Simulator of deterministic electron teleportation in SAW-driven wires."""

__version__ = "0.1.0"
