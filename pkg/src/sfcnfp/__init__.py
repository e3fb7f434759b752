"""Parallelization analysis, queueing estimates and simulation for service function chains."""

__version__ = "0.1.0"
