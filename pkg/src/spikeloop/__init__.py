"""Closed-loop neural encode/decode toolkit with a simulated robot arm."""

__version__ = "0.1.0"
