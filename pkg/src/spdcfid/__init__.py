"""Entanglement fidelity of crossed-crystal SPDC sources by ray tracing."""

__version__ = "0.1.0"
