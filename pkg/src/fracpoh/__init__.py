"""Nonlocal Dirichlet problems, boundary traces and Pohozaev identity checks."""

__version__ = "0.1.0"
