"""Maximal displacement of subcritical branching random walks."""

__version__ = "0.1.0"
