"""Discrete-event emulation of host NIC queues and switch egress queues.

Time is virtual, in integer nanoseconds. Events at the same instant run in
three phases: packet arrivals, then completions and application events,
then service decisions (link dequeue, host write scheduling). A decision
therefore sees every packet that reached its queue at that instant, which
keeps traces independent of the order events happened to be pushed.

Service is non-preemptive: a packet on the wire finishes before the next
dequeue, and a host write in progress finishes before the next pick.
"""

from __future__ import annotations

import heapq
import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from .. import errors
from ..qos import NUM_BANDS, tos_to_band

GIGABIT = 125_000_000          # bytes per second
DEFAULT_RATE = GIGABIT
DEFAULT_MTU = 1500
DEFAULT_BAND_CAPACITY = 1000

TCP_IP_HEADER = 40
UDP_HEADER = 8
IP_HEADER = 20

_ARRIVE, _COMPLETE, _DECIDE = 0, 1, 2


@dataclass(eq=False)
class EmuPacket:
    tos: int
    size_bytes: int
    ingress_port: str = ""
    payload: object = None
    enqueue_seq: int = -1
    packet_id: int = -1
    src: str = ""
    dst: str = ""
    enqueue_ns: int | None = None       # first admission to any queue
    queue_entry_ns: int = 0             # entry into the current queue
    queue_delay_ns: int = 0             # summed over hops
    delivery_ns: int | None = None
    dropped_at: str | None = None
    hops: list = field(default_factory=list)

    @property
    def band(self) -> int:
        return tos_to_band(self.tos)


class BandQueue:
    """Three FIFO bands, strict priority, band 0 first."""

    def __init__(self, capacity: int = DEFAULT_BAND_CAPACITY, bands: int = NUM_BANDS):
        self.capacity = capacity
        self.bands = [deque() for _ in range(bands)]
        self.drops = [0] * bands
        self._seq = 0

    def enqueue(self, p: EmuPacket) -> bool:
        band = tos_to_band(p.tos)
        if len(self.bands[band]) >= self.capacity:
            self.drops[band] += 1
            return False
        p.enqueue_seq = self._seq
        self._seq += 1
        self.bands[band].append(p)
        return True

    def dequeue(self) -> EmuPacket | None:
        for band in self.bands:
            if band:
                return band.popleft()
        return None

    def free(self, band: int) -> int:
        return self.capacity - len(self.bands[band])

    def occupancy(self) -> list[int]:
        return [len(b) for b in self.bands]

    def __len__(self):
        return sum(len(b) for b in self.bands)


def serialization_ns(size_bytes: int, rate_bytes_per_sec) -> int:
    """Wire time rounded up to the next whole nanosecond."""
    if isinstance(rate_bytes_per_sec, int):
        return -(-size_bytes * 1_000_000_000 // rate_bytes_per_sec)
    return math.ceil(size_bytes * 1e9 / rate_bytes_per_sec)


class EmuLink:
    """One direction of a link: egress queue plus the wire behind it."""

    def __init__(self, src: str, dst: str, rate_bytes_per_sec=DEFAULT_RATE,
                 propagation_delay_ns: int = 0, capacity: int = DEFAULT_BAND_CAPACITY,
                 loss: float = 0.0):
        if rate_bytes_per_sec <= 0:
            raise errors.TopologyError("link rate must be positive")
        if propagation_delay_ns < 0:
            raise errors.TopologyError("propagation delay must be >= 0")
        self.src, self.dst = src, dst
        self.rate_bytes_per_sec = rate_bytes_per_sec
        self.propagation_delay_ns = int(propagation_delay_ns)
        self.queue = BandQueue(capacity)
        self.loss = loss
        self.lost = 0
        self.in_service: EmuPacket | None = None
        self.busy_ns = 0
        self.bytes_sent = 0
        self._start_pending = False

    @property
    def name(self) -> str:
        return f"{self.src}->{self.dst}"

    @property
    def drops(self) -> list[int]:
        return self.queue.drops

    def serialization_ns(self, size_bytes: int) -> int:
        return serialization_ns(size_bytes, self.rate_bytes_per_sec)


@dataclass(eq=False)
class EmuWrite:
    """A message handed to a host's network stack by a channel thread."""
    packets: list
    priority: int = 0
    blocking: bool = True
    seq: int = 0
    cost_ns: int = 0


class EmuHost:
    """A host: one NIC link plus a single-CPU write path.

    Channel threads contend for the CPU to copy messages into the NIC
    queue; the highest thread priority wins, ties go to submission order.
    """

    def __init__(self, name: str, write_fixed_ns: int = 0, write_ns_per_byte: float = 0.0):
        self.name = name
        self.nic: EmuLink | None = None
        self.write_fixed_ns = int(write_fixed_ns)
        self.write_ns_per_byte = write_ns_per_byte
        self.backlog: list = []
        self.blocked: deque = deque()
        self.current: EmuWrite | None = None
        self.cpu_busy = False
        self.paused = False
        self._pick_pending = False

    def write_cost(self, nbytes: int) -> int:
        return self.write_fixed_ns + int(round(nbytes * self.write_ns_per_byte))


class EmuSwitch:
    def __init__(self, name: str):
        self.name = name
        self.egress: dict[str, EmuLink] = {}


@dataclass(eq=False)
class Transfer:
    """A whole message split into packets; complete when every packet lands."""
    src: str
    dst: str
    size_bytes: int
    tos: int
    payload: object = None
    on_delivered: Callable | None = None
    on_lost: Callable | None = None
    submit_ns: int = 0
    remaining: int = 0
    lost: bool = False
    delivered_ns: int | None = None


def packetize(message_bytes: int, carrier: str = "tcp", mtu: int = DEFAULT_MTU) -> list[int]:
    """On-the-wire packet sizes for one message.

    Stream carriers segment at MSS with a 40-byte TCP/IP header per
    segment. UDP sends one datagram, IP-fragmented at 8-byte aligned
    offsets.
    """
    if message_bytes <= 0:
        raise ValueError("message must have at least one byte")
    if carrier == "udp":
        body = message_bytes + UDP_HEADER
        chunk = (mtu - IP_HEADER) // 8 * 8
        sizes = []
        while body > 0:
            take = min(chunk, body)
            sizes.append(take + IP_HEADER)
            body -= take
        return sizes
    mss = mtu - TCP_IP_HEADER
    full, rest = divmod(message_bytes, mss)
    return [mtu] * full + ([rest + TCP_IP_HEADER] if rest else [])


class EmuTopology:
    """Hosts, at most one switch, full-duplex links, one virtual clock."""

    def __init__(self, seed: int = 0, mtu: int = DEFAULT_MTU, record_hops: bool = False):
        self.hosts: dict[str, EmuHost] = {}
        self.switch: EmuSwitch | None = None
        self.links: list[EmuLink] = []
        self.mtu = mtu
        self.now = 0
        self.record_hops = record_hops
        self.rng = random.Random(seed)
        self.packets: list[EmuPacket] = []
        self.record_packets = False
        self.collect_deliveries = True
        self.on_deliver: Callable | None = None
        self._events: list = []
        self._seq = 0
        self._pid = 0
        self._wseq = 0
        self._delivered: list = []

    # -- building ----------------------------------------------------------

    def add_host(self, name, write_fixed_ns=0, write_ns_per_byte=0.0) -> EmuHost:
        if name in self.hosts or (self.switch and self.switch.name == name):
            raise errors.TopologyError(f"duplicate node {name}")
        host = self.hosts[name] = EmuHost(name, write_fixed_ns, write_ns_per_byte)
        return host

    def add_switch(self, name) -> EmuSwitch:
        if self.switch is not None:
            raise errors.TopologyError("only one switch is supported")
        if name in self.hosts:
            raise errors.TopologyError(f"duplicate node {name}")
        self.switch = EmuSwitch(name)
        return self.switch

    def _node(self, name):
        if name in self.hosts:
            return self.hosts[name]
        if self.switch and self.switch.name == name:
            return self.switch
        raise errors.UnknownHost(name)

    def add_link(self, a, b, rate_bytes_per_sec=DEFAULT_RATE, propagation_delay_ns=0,
                 capacity=DEFAULT_BAND_CAPACITY, loss=0.0):
        """Full duplex: one EmuLink per direction."""
        pair = []
        for src, dst in ((a, b), (b, a)):
            node = self._node(src)
            self._node(dst)
            link = EmuLink(src, dst, rate_bytes_per_sec, propagation_delay_ns, capacity, loss)
            if isinstance(node, EmuHost):
                if node.nic is not None:
                    raise errors.TopologyError(f"host {src} already has a NIC link")
                node.nic = link
            else:
                node.egress[dst] = link
            self.links.append(link)
            pair.append(link)
        return tuple(pair)

    def link(self, src, dst) -> EmuLink:
        for link in self.links:
            if link.src == src and link.dst == dst:
                return link
        raise errors.UnknownHost(f"no link {src}->{dst}")

    def host(self, name) -> EmuHost:
        try:
            return self.hosts[name]
        except KeyError:
            raise errors.UnknownHost(name) from None

    # -- event plumbing ----------------------------------------------------

    def _push(self, t, phase, fn, *args):
        heapq.heappush(self._events, (t, phase, self._seq, fn, args))
        self._seq += 1

    def schedule(self, t: int, fn: Callable, *args) -> None:
        """Run ``fn(*args)`` at virtual time t (completion phase)."""
        if t < self.now:
            raise ValueError(f"cannot schedule in the past ({t} < {self.now})")
        self._push(t, _COMPLETE, fn, *args)

    def next_event_time(self) -> int | None:
        return self._events[0][0] if self._events else None

    def step(self, until: int) -> list[EmuPacket]:
        """Advance the clock to ``until``; return packets delivered meanwhile."""
        if until < self.now:
            raise ValueError(f"until={until} is before now={self.now}")
        events = self._events
        while events and events[0][0] <= until:
            t, _, _, fn, args = heapq.heappop(events)
            self.now = t
            fn(*args)
        self.now = until
        out, self._delivered = self._delivered, []
        return out

    def run(self, limit_ns: int | None = None) -> list[EmuPacket]:
        """Process events until none remain (or the next is past ``limit_ns``).

        Unlike ``step`` the clock stays at the last event processed.
        """
        events = self._events
        while events and (limit_ns is None or events[0][0] <= limit_ns):
            t, _, _, fn, args = heapq.heappop(events)
            self.now = t
            fn(*args)
        out, self._delivered = self._delivered, []
        return out

    # -- admission ---------------------------------------------------------

    def _new_packet(self, src, dst, tos, size, payload=None) -> EmuPacket:
        p = EmuPacket(tos=tos, size_bytes=size, ingress_port=src, payload=payload,
                      packet_id=self._pid, src=src, dst=dst)
        self._pid += 1
        if self.record_packets:
            self.packets.append(p)
        return p

    def admit(self, host: str, packet: EmuPacket) -> bool:
        """Put a packet straight into a host's NIC queue, now."""
        h = self.host(host)
        if packet.packet_id < 0:
            packet.packet_id = self._pid
            self._pid += 1
            if self.record_packets:
                self.packets.append(packet)
        packet.src = packet.src or host
        return self._enqueue(h.nic, packet)

    def make_packet(self, src, dst, tos, size, payload=None) -> EmuPacket:
        return self._new_packet(src, dst, tos, size, payload)

    def send_message(self, src: str, dst: str, size_bytes: int, tos: int = 0, *,
                     priority: int = 0, carrier: str = "tcp", payload=None,
                     on_delivered=None, on_lost=None) -> Transfer:
        """Hand a message to ``src``'s write path now.

        Stream carriers block on a full NIC band (socket backpressure);
        datagram carriers drop what does not fit.
        """
        self.host(dst)
        h = self.host(src)
        xfer = Transfer(src, dst, size_bytes, tos, payload, on_delivered, on_lost, self.now)
        sizes = packetize(size_bytes, carrier, self.mtu)
        xfer.remaining = len(sizes)
        packets = [self._new_packet(src, dst, tos, s, xfer) for s in sizes]
        w = EmuWrite(packets, priority, blocking=carrier != "udp", seq=self._wseq,
                     cost_ns=h.write_cost(size_bytes))
        self._wseq += 1
        heapq.heappush(h.backlog, (-priority, w.seq, w))
        self._request_pick(h)
        return xfer

    # -- host write path ---------------------------------------------------

    def _request_pick(self, h: EmuHost):
        if not h._pick_pending:
            h._pick_pending = True
            self._push(self.now, _DECIDE, self._pick, h)

    def _pick(self, h: EmuHost):
        h._pick_pending = False
        if h.paused or h.cpu_busy:
            return
        while h.blocked:
            if not self._admit_write(h, h.blocked[0]):
                return                  # retried when the NIC dequeues
            h.blocked.popleft()
        while h.backlog:
            _, _, w = heapq.heappop(h.backlog)
            if w.cost_ns > 0:
                h.cpu_busy = True
                h.current = w
                self._push(self.now + w.cost_ns, _COMPLETE, self._write_done, h)
                return
            if not self._admit_write(h, w):
                h.blocked.append(w)
                return

    def _write_done(self, h: EmuHost):
        w, h.current = h.current, None
        h.cpu_busy = False
        if not self._admit_write(h, w):
            h.blocked.append(w)
        self._request_pick(h)

    def _admit_write(self, h: EmuHost, w: EmuWrite) -> bool:
        q = h.nic.queue
        while w.packets:
            p = w.packets[0]
            if w.blocking and q.free(p.band) <= 0:
                return False
            w.packets.pop(0)
            self._enqueue(h.nic, p)
        return True

    def pause(self, host: str):
        self.host(host).paused = True

    def resume(self, host: str):
        h = self.host(host)
        h.paused = False
        self._request_pick(h)

    # -- links -------------------------------------------------------------

    def _enqueue(self, link: EmuLink, p: EmuPacket) -> bool:
        p.queue_entry_ns = self.now
        if p.enqueue_ns is None:
            p.enqueue_ns = self.now
        if not link.queue.enqueue(p):
            self._drop(p, link.name)
            return False
        if not link._start_pending and link.in_service is None:
            link._start_pending = True
            self._push(self.now, _DECIDE, self._tx_start, link)
        return True

    def _tx_start(self, link: EmuLink):
        link._start_pending = False
        if link.in_service is not None:
            return
        p = link.queue.dequeue()
        if p is None:
            return
        wait = self.now - p.queue_entry_ns
        p.queue_delay_ns += wait
        if self.record_hops:
            p.hops.append((link.name, p.queue_entry_ns, self.now))
        link.in_service = p
        ser = link.serialization_ns(p.size_bytes)
        link.busy_ns += ser
        self._push(self.now + ser, _COMPLETE, self._tx_done, link)
        # a host stalled on a full band may proceed now
        h = self.hosts.get(link.src)
        if h is not None and h.nic is link and (h.backlog or h.blocked):
            self._request_pick(h)

    def _tx_done(self, link: EmuLink):
        p = link.in_service
        link.in_service = None
        link.bytes_sent += p.size_bytes
        if link.loss and (link.loss >= 1.0 or self.rng.random() < link.loss):
            link.lost += 1
            self._drop(p, link.name)
        elif link.propagation_delay_ns:
            self._push(self.now + link.propagation_delay_ns, _ARRIVE, self._arrive, link.dst, p,
                       link.src)
        else:
            # same instant; decisions still wait for the later phase
            self._arrive(link.dst, p, link.src)
        if len(link.queue):
            link._start_pending = True
            self._push(self.now, _DECIDE, self._tx_start, link)

    def _arrive(self, node_name: str, p: EmuPacket, from_node: str):
        p.ingress_port = from_node
        if node_name == p.dst:
            self._deliver(p)
            return
        if self.switch is None or node_name != self.switch.name:
            self._drop(p, f"{node_name}:no-route")
            return
        link = self.switch.egress.get(p.dst)
        if link is None:
            self._drop(p, f"{node_name}:no-route")
            return
        self._enqueue(link, p)

    def _deliver(self, p: EmuPacket):
        p.delivery_ns = self.now
        if self.collect_deliveries:
            self._delivered.append(p)
        if self.on_deliver is not None:
            self.on_deliver(p)
        xfer = p.payload
        if isinstance(xfer, Transfer) and not xfer.lost:
            xfer.remaining -= 1
            if xfer.remaining == 0:
                xfer.delivered_ns = self.now
                if xfer.on_delivered:
                    xfer.on_delivered(xfer)

    def _drop(self, p: EmuPacket, where: str):
        p.dropped_at = where
        xfer = p.payload
        if isinstance(xfer, Transfer) and not xfer.lost:
            xfer.lost = True
            if xfer.on_lost:
                xfer.on_lost(xfer)
