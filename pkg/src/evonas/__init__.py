"""Evolutionary architecture search for speaker-embedding networks."""

__version__ = "0.1.0"
