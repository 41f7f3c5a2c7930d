"""Baseband simulator for a four-node always-on FDMA mesh of 2x2 MIMO links."""

__version__ = "0.1.0"
