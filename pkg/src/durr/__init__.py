"""Dynamically unfolding recurrent restorer: forward-Euler restoration with a learned stopping time."""

__version__ = "0.1.0"
