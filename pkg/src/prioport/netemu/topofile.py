"""Declarative topology files and CSV packet traces.

Topology file, one statement per line, ``#`` comments::

    host H1 write_fixed_ns=2000 write_ns_per_byte=0.1
    switch S
    link H1 S rate=1gbit delay=0 capacity=1000 loss=0

Rates take ``bit``-based (kbit, mbit, gbit) or byte-based (B, KB, MB, GB)
suffixes; a bare number is bytes per second. Delays take ns/us/ms/s, bare
numbers are nanoseconds.
"""

from __future__ import annotations

import csv
import re
import shlex

from .. import errors
from .core import EmuTopology

_RATE_UNITS = {
    "": 1, "b": 1, "bps": 1, "kb": 10**3, "mb": 10**6, "gb": 10**9,
    "kbit": 10**3 / 8, "mbit": 10**6 / 8, "gbit": 10**9 / 8, "bit": 1 / 8,
}
_TIME_UNITS = {"": 1, "ns": 1, "us": 10**3, "ms": 10**6, "s": 10**9}
_NUM = re.compile(r"(\d+(?:\.\d+)?)([a-zA-Z]*)\Z")


def _quantity(text, units, what):
    m = _NUM.match(text.strip())
    if not m or m.group(2).lower() not in units:
        raise errors.TopologyError(f"bad {what}: {text!r}")
    value = float(m.group(1)) * units[m.group(2).lower()]
    return int(value) if value == int(value) else value


def parse_rate(text: str):
    rate = _quantity(text, _RATE_UNITS, "rate")
    if rate <= 0:
        raise errors.TopologyError(f"rate must be positive: {text!r}")
    return rate


def parse_duration_ns(text: str) -> int:
    return int(_quantity(text, _TIME_UNITS, "duration"))


def _options(words, allowed, lineno):
    opts = {}
    for w in words:
        key, sep, value = w.partition("=")
        if not sep or key not in allowed:
            raise errors.TopologyError(f"line {lineno}: unexpected {w!r}")
        opts[key] = value
    return opts


def parse_topology(text: str, seed: int = 0) -> EmuTopology:
    topo = EmuTopology(seed=seed)
    for lineno, raw in enumerate(text.splitlines(), 1):
        words = shlex.split(raw, comments=True)
        if not words:
            continue
        kind, args = words[0].lower(), words[1:]
        try:
            if kind == "host" and args:
                opts = _options(args[1:], {"write_fixed_ns", "write_ns_per_byte"}, lineno)
                topo.add_host(args[0],
                              parse_duration_ns(opts.get("write_fixed_ns", "0")),
                              float(opts.get("write_ns_per_byte", 0)))
            elif kind == "switch" and len(args) == 1:
                topo.add_switch(args[0])
            elif kind == "link" and len(args) >= 2:
                opts = _options(args[2:], {"rate", "delay", "capacity", "loss"}, lineno)
                topo.add_link(args[0], args[1],
                              parse_rate(opts.get("rate", "1gbit")),
                              parse_duration_ns(opts.get("delay", "0")),
                              int(opts.get("capacity", 1000)),
                              float(opts.get("loss", 0)))
            else:
                raise errors.TopologyError(f"line {lineno}: cannot parse {raw.strip()!r}")
        except ValueError as exc:
            raise errors.TopologyError(f"line {lineno}: {exc}") from exc
    for host in topo.hosts.values():
        if host.nic is None:
            raise errors.TopologyError(f"host {host.name} has no link")
    return topo


def load_topology(path, seed: int = 0) -> EmuTopology:
    with open(path) as fh:
        return parse_topology(fh.read(), seed)


def dump_topology(topo: EmuTopology) -> str:
    lines = []
    for h in topo.hosts.values():
        lines.append(f"host {h.name} write_fixed_ns={h.write_fixed_ns} "
                     f"write_ns_per_byte={h.write_ns_per_byte}")
    if topo.switch:
        lines.append(f"switch {topo.switch.name}")
    seen = set()
    for link in topo.links:
        key = frozenset((link.src, link.dst))
        if key in seen:
            continue
        seen.add(key)
        lines.append(f"link {link.src} {link.dst} rate={link.rate_bytes_per_sec} "
                     f"delay={link.propagation_delay_ns} capacity={link.queue.capacity} "
                     f"loss={link.loss}")
    return "\n".join(lines) + "\n"


TRACE_COLUMNS = ["packet_id", "src", "dst", "tos", "band", "size_bytes",
                 "enqueue_ns", "delivery_ns", "dropped"]


def write_trace(packets, fh) -> None:
    """One row per packet. ``dropped`` names where it was lost, else empty."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for p in sorted(packets, key=lambda p: p.packet_id):
        w.writerow([p.packet_id, p.src, p.dst, p.tos, p.band, p.size_bytes,
                    "" if p.enqueue_ns is None else p.enqueue_ns,
                    "" if p.delivery_ns is None else p.delivery_ns,
                    p.dropped_at or ""])
