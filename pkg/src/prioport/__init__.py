"""Peer-to-peer publish/subscribe with per-channel priority QoS."""

__version__ = "0.1.0"
