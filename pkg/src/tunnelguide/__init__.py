"""Resonant tunneling through a waveguide resonator with two conical narrows."""

__version__ = "0.1.0"
