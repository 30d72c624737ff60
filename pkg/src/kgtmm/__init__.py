"""Decentralized minimax optimization with gradient tracking and local updates."""

__version__ = "0.1.0"
