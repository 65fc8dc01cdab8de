"""Optimal control of shallow water flows: space-time truth solver and
POD-Galerkin reduced order model."""

__version__ = "0.1.0"
