"""Hypothesis-graph navigation in procedurally generated grid worlds."""

__version__ = "0.1.0"
