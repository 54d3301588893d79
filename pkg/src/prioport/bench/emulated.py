"""Deterministic, virtual-time bench over an EmuTopology.

Ports and channels here carry the same ChannelState as real ones and take
the same admin commands; publishing hands messages to the emulated host
write path at virtual instants instead of to OS threads, so a run is a
pure function of topology, parameters and seed.
"""

from __future__ import annotations

import itertools
import random

from .. import errors
from ..channel import Channel, ChannelState
from ..netemu.core import EmuTopology, Transfer
from ..qos import execute_admin_text
from ..wire import FLAG_ACK_REQUESTED, Frame, FrameType, decode_frame, encode_frame, wire_size
from .stats import LoadReport, LoadSpec, ProbeResult, RttSample

NS = 1_000_000_000


class EmuChannel(Channel):
    def __init__(self, session, src: "EmuPort", dst: "EmuPort", direction, carrier):
        peer = dst.name if direction == "output" else src.name
        super().__init__(ChannelState(peer, direction, carrier, status="active"))
        self.session = session
        self.src, self.dst = src, dst
        self.ids = itertools.count()
        self.reverse: EmuChannel | None = None

    @property
    def priority(self) -> int:
        return self.state.sched.effective_priority


class EmuPort:
    """Admin target for an emulated port; duck-types the real Port."""

    def __init__(self, session, name, host):
        self.session = session
        self.name = name
        self.host = host
        self.outputs: dict[str, EmuChannel] = {}
        self.inputs: dict[str, EmuChannel] = {}

    def find_channel(self, peer, direction=None) -> EmuChannel:
        if direction in (None, "output") and peer in self.outputs:
            return self.outputs[peer]
        if direction in (None, "input") and peer in self.inputs:
            return self.inputs[peer]
        raise errors.NoSuchChannel(peer)

    def channel_info(self, peer, direction=None) -> ChannelState:
        return self.find_channel(peer, direction).snapshot()

    def connect(self, dst, carrier="tcp"):
        return self.session.connect(self.name, dst, carrier).snapshot()

    def disconnect(self, peer):
        ch = self.outputs.pop(peer, None)
        if ch is None:
            raise errors.NoSuchChannel(peer)
        ch.state.status = "closed"
        ch.reverse.state.status = "closed"
        ch.dst.inputs.pop(self.name, None)

    def admin(self, text) -> str:
        return execute_admin_text(self, text)


class ProbeHandle:
    def __init__(self, warmup):
        self.warmup = warmup
        self.sent: dict[int, int] = {}
        self.counted: list[int] = []
        self.samples: list[RttSample] = []
        self.duplicates = 0
        self._acked: set[int] = set()

    def result(self) -> ProbeResult:
        counted = set(self.counted)
        samples = sorted((s for s in self.samples if s.message_id in counted),
                         key=lambda s: s.message_id)
        return ProbeResult(samples, len(counted) - len(samples), self.duplicates)


class EmuSession:
    def __init__(self, topology: EmuTopology, seed: int = 0):
        self.topo = topology
        self.topo.collect_deliveries = False
        self.rng = random.Random(seed)
        self.ports: dict[str, EmuPort] = {}

    def add_port(self, name, host) -> EmuPort:
        self.topo.host(host)
        if name in self.ports:
            raise errors.NameAlreadyRegistered(name)
        port = self.ports[name] = EmuPort(self, name, host)
        return port

    def port(self, name) -> EmuPort:
        try:
            return self.ports[name]
        except KeyError:
            raise errors.LookupFailure(f"{name}: not-found") from None

    def connect(self, src, dst, carrier="tcp") -> EmuChannel:
        if carrier not in ("tcp", "udp", "emu"):
            raise errors.CarrierUnsupported(carrier)
        s, d = self.port(src), self.port(dst)
        if dst in s.outputs:
            return s.outputs[dst]
        out = EmuChannel(self, s, d, "output", carrier)
        inp = EmuChannel(self, s, d, "input", carrier)
        out.reverse, inp.reverse = inp, out
        s.outputs[dst] = out
        d.inputs[src] = inp
        return out

    def admin(self, port, text) -> str:
        return self.port(port).admin(text)

    # -- traffic -----------------------------------------------------------

    def send(self, src, dst, size_bytes, *, ack=False, on_ack=None, on_delivered=None,
             on_lost=None) -> int:
        """Publish one message on src->dst at the current virtual time."""
        ch = self.port(src).find_channel(dst, "output")
        if ch.state.status != "active":
            raise errors.ChannelDown(f"{src}->{dst}")
        mid = next(ch.ids)
        frame = Frame(FrameType.DATA, mid, self.topo.now, FLAG_ACK_REQUESTED if ack else 0)
        inp = ch.reverse

        def delivered(xfer: Transfer):
            inp.state.counters.received += 1
            if on_delivered:
                on_delivered(xfer)
            if frame.ack_requested and inp.state.status == "active":
                data = encode_frame(frame.ack())
                self.topo.send_message(
                    inp.dst.host, inp.src.host, len(data), inp.state.tos,
                    priority=inp.priority, carrier=inp.state.carrier, payload=data,
                    on_delivered=acked)

        def acked(xfer: Transfer):
            ack_frame, _ = decode_frame(xfer.payload)
            ch.state.counters.acks += 1
            if on_ack:
                on_ack(RttSample(ack_frame.message_id, ack_frame.timestamp_ns, self.topo.now))

        def lost(xfer: Transfer):
            if on_lost:
                on_lost(xfer)

        self.topo.send_message(ch.src.host, ch.dst.host, wire_size(size_bytes), ch.state.tos,
                               priority=ch.priority, carrier=ch.state.carrier, payload=frame,
                               on_delivered=delivered, on_lost=lost)
        ch.state.counters.enqueued += 1
        ch.state.counters.sent += 1
        return mid

    def schedule_probe(self, src, dst, size_bytes=1024, rate_hz=100.0, count=100, warmup=100,
                       start_ns=0, jitter=True) -> ProbeHandle:
        """Ack-requested probes, one per 1/rate slot at a seeded random offset."""
        if rate_hz <= 0:
            raise errors.OutOfRange("probe rate must be positive")
        handle = ProbeHandle(warmup)
        interval = int(NS / rate_hz)
        total = warmup + count

        def on_ack(sample: RttSample):
            if sample.message_id in handle._acked:
                handle.duplicates += 1
                return
            handle._acked.add(sample.message_id)
            handle.samples.append(sample)

        def fire(i):
            mid = self.send(src, dst, size_bytes, ack=True, on_ack=on_ack)
            handle.sent[mid] = self.topo.now
            if i >= warmup:
                handle.counted.append(mid)

        for i in range(total):
            offset = self.rng.randrange(interval) if jitter else 0
            self.topo.schedule(start_ns + i * interval + offset, fire, i)
        return handle

    def schedule_load(self, src, dst, spec: LoadSpec, duration_ns: int, start_ns=0,
                      bandwidth=None) -> LoadReport:
        """Constant-rate load of whole messages; the report fills in as it runs."""
        ch = self.port(src).find_channel(dst, "output")
        if bandwidth is None:
            bandwidth = self.topo.host(ch.src.host).nic.rate_bytes_per_sec
        rate = spec.byte_rate(bandwidth)
        report = LoadReport(rate, duration_ns)
        if duration_ns <= 0:
            return report
        interval = spec.message_size_bytes * NS / rate
        end = start_ns + duration_ns

        def delivered(xfer):
            report.delivered_bytes += spec.message_size_bytes

        def fire(k):
            self.send(src, dst, spec.message_size_bytes, on_delivered=delivered)
            report.messages += 1
            report.emitted_bytes += spec.message_size_bytes
            nxt = start_ns + round((k + 1) * interval)
            if nxt < end:
                self.topo.schedule(nxt, fire, k + 1)

        self.topo.schedule(start_ns, fire, 0)
        return report

    def run(self, limit_ns=None):
        self.topo.run(limit_ns)

    # -- one-shot helpers ----------------------------------------------------

    def run_rtt_probe(self, src, dst, size_bytes=1024, rate_hz=100.0, count=100, warmup=100,
                      start_ns=None, jitter=True) -> ProbeResult:
        start = self.topo.now if start_ns is None else start_ns
        handle = self.schedule_probe(src, dst, size_bytes, rate_hz, count, warmup, start, jitter)
        self.run()
        result = handle.result()
        if count > 0 and not result.samples:
            raise errors.ZeroAcks(f"{src}->{dst}: none of {count} probes acknowledged")
        return result

    def run_load(self, src, dst, spec: LoadSpec, duration_ns: int) -> LoadReport:
        report = self.schedule_load(src, dst, spec, duration_ns, self.topo.now)
        self.run()
        return report
