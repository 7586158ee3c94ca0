"""Federated training simulator for mobile-agent episode data."""

__version__ = "0.1.0"
