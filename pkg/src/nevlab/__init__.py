"""Numerical lab for Nevanlinna functions whose asymptotic values are all prepoles."""

__version__ = "0.1.0"
