"""Semantic-guided next-best-view exploration in a deterministic grid world."""

__version__ = "0.1.0"
