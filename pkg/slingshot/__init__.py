"""Gradient Slingshots: manipulating and auditing feature visualization."""

__version__ = "0.1.0"
