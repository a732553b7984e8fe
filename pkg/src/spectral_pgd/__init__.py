"""Spectral-gated two-stage deterministic depth prediction, from scratch on numpy."""

__version__ = "0.1.0"
