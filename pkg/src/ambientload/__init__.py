"""Ambient-PMU dynamic load parameter estimation via the OU regression theorem."""
__version__ = "0.1.0"
