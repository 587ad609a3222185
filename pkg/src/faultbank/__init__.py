"""Fault-tolerant distributed bank: branch servers that recover from crashes
through message logging and coordinated checkpoints, a recovery module that
runs two-phase checkpoints and restarts, and a heartbeat monitor."""

__version__ = "0.1.0"
