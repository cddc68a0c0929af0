"""Latency tails of erasure-coded storage: closed forms, simulation and tail-index estimation."""

__version__ = "0.1.0"
