"""Spin-system thermalization and decoupling toolkit."""

__version__ = "0.1.0"
