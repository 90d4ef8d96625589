"""Shrinking-horizon MPC for bounded STL tasks with time-interval decomposition."""

__version__ = "0.1.0"
