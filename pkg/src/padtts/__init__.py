"""Desk-scale continuous-emotion text-to-speech laboratory."""

__version__ = "0.1.0"
