"""Deterministic emulation of NIC and switch congestion points."""

from .core import (
    DEFAULT_MTU,
    DEFAULT_RATE,
    GIGABIT,
    BandQueue,
    EmuHost,
    EmuLink,
    EmuPacket,
    EmuTopology,
    Transfer,
    packetize,
    serialization_ns,
)
from .network import EmuEndpoint, EmuNetwork
from .topofile import dump_topology, load_topology, parse_topology, write_trace

__all__ = [
    "DEFAULT_MTU", "DEFAULT_RATE", "GIGABIT", "BandQueue", "EmuHost", "EmuLink",
    "EmuPacket", "EmuTopology", "Transfer", "packetize", "serialization_ns",
    "EmuEndpoint", "EmuNetwork", "dump_topology", "load_topology", "parse_topology",
    "write_trace",
]
