"""Consequential ranking models: fidelity to an original ranker vs. long-term welfare."""

__version__ = "0.1.0"
