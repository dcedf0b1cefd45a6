"""Decentralized detection of action-manipulation attacks in cooperative
multi-agent systems with continuous actions."""

__version__ = "0.1.0"
