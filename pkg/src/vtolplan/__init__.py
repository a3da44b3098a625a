"""Geometric tracking control with a cone-constrained attitude planner for multirotors."""

__version__ = "0.1.0"
