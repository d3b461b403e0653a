"""Numerical toolkit for NLS-type equations, their Lax pairs and non-holonomic deformations."""

__version__ = "0.1.0"
