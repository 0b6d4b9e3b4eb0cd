"""Dual-stream feature decomposition detector for synthetic speech."""

__version__ = "0.1.0"
