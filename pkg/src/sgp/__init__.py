"""Situation graph prediction toolkit: ontology, synthetic corpora, metrics and evaluation harness."""

__version__ = "0.1.0"
