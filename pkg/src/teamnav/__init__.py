"""Decentralized multi-robot state estimation toolkit."""

__version__ = "0.1.0"
