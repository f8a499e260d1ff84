"""Reliability of multi-channel linear systems via controlled invariance and invariance entropy."""

__version__ = "0.1.0"
