"""Concept-guided zero-shot classification with robust score aggregation."""

__version__ = "0.1.0"
