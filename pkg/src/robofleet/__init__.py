"""Orchestration of heterogeneous robot teams through a shared memory."""

__version__ = "0.1.0"
