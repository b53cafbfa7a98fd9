"""Latency-quality matching router for pools of interchangeable providers."""

__version__ = "0.1.0"
