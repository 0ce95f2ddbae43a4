"""Quasi-static simulator for leader-follower secondary control of inverter microgrids."""

__version__ = "1.0.0"
