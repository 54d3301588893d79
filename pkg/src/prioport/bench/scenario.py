"""The two evaluation topologies and the drivers that run them.

``nic``: both publishers share host H1, so the load contends with the
probe for H1's write path and NIC queue. ``switch``: publishers on H1 and
H2, both subscribers on H3, so contention happens at the switch egress
towards H3. Both use gigabit links and larger probes in ``switch``.

Prioritized runs apply the two admin commands used on the publisher of the
measurement channel: SCHED_FIFO/30 for its thread and HIGH packet priority.
"""

from __future__ import annotations

import itertools
import threading
import time
from dataclasses import dataclass

from .. import errors
from ..netemu.core import GIGABIT, EmuTopology
from ..netemu.topofile import load_topology
from ..wire import CARRIERS
from .emulated import EmuSession
from .stats import BenchReport, BenchRow, LoadReport, LoadSpec, ProbeResult, RttSample, summarize

QOS_COMMANDS = (
    "prop set {peer} (sched ((policy SCHED_FIFO) (priority 30)))",
    "prop set {peer} (qos ((priority HIGH)))",
)

PROBE, PROBE_SINK, LOAD, LOAD_SINK = "/pub1", "/sub1", "/pub2", "/sub2"

# host write path: fixed syscall-ish cost plus a per-byte copy cost
WRITE_FIXED_NS = 2000
WRITE_NS_PER_BYTE = 0.05


@dataclass(frozen=True)
class ScenarioDef:
    name: str
    roles: dict
    probe_size: int

    def topology(self, seed=0, rate=GIGABIT) -> EmuTopology:
        topo = EmuTopology(seed=seed)
        for host in sorted(set(self.roles.values())):
            topo.add_host(host, WRITE_FIXED_NS, WRITE_NS_PER_BYTE)
        topo.add_switch("S")
        for host in sorted(set(self.roles.values())):
            topo.add_link(host, "S", rate)
        return topo


SCENARIOS = {
    "nic": ScenarioDef("nic", {PROBE: "H1", LOAD: "H1", PROBE_SINK: "H2", LOAD_SINK: "H2"},
                       probe_size=1024),
    "switch": ScenarioDef("switch", {PROBE: "H1", LOAD: "H2", PROBE_SINK: "H3", LOAD_SINK: "H3"},
                          probe_size=32 * 1024),
}
ALIASES = {"nic_congestion": "nic", "switch_congestion": "switch"}

DEFAULT_LOAD_SIZE = 32 * 1024
DEFAULT_RATE_HZ = 100.0
DEFAULT_WARMUP = 100
DEFAULT_COUNT = 300
LEAD_IN_NS = 20_000_000


def scenario_def(name) -> ScenarioDef:
    name = ALIASES.get(name, name)
    try:
        return SCENARIOS[name]
    except KeyError:
        raise errors.PrioportError(f"unknown scenario {name!r}") from None


def _qos_flag(qos) -> bool:
    if isinstance(qos, str):
        if qos not in ("on", "off"):
            raise errors.PrioportError(f"qos must be on or off, not {qos!r}")
        return qos == "on"
    return bool(qos)


@dataclass
class ScenarioResult:
    row: BenchRow
    probe: ProbeResult
    load: LoadReport | None
    session: object = None


def run_emulated(scenario, qos, load_fraction, carriers=("tcp", "tcp"), *, count=DEFAULT_COUNT,
                 warmup=DEFAULT_WARMUP, rate_hz=DEFAULT_RATE_HZ, probe_size=None,
                 load_size=DEFAULT_LOAD_SIZE, seed=0, emu_topology=None) -> ScenarioResult:
    """One configuration in virtual time. Same inputs, same numbers.

    ``emu_topology`` replaces the built-in network: a topology, or a
    callable taking the seed. It must have the hosts the scenario uses.
    """
    sdef = scenario_def(scenario)
    on = _qos_flag(qos)
    probe_carrier, load_carrier = carriers
    topo = emu_topology(seed) if callable(emu_topology) else emu_topology
    if topo is None:
        topo = sdef.topology(seed)
    session = EmuSession(topo, seed)
    for name, host in sdef.roles.items():
        session.add_port(name, host)
    session.connect(PROBE, PROBE_SINK, probe_carrier)
    session.connect(LOAD, LOAD_SINK, load_carrier)
    if on:
        for cmd in QOS_COMMANDS:
            reply = session.admin(PROBE, cmd.format(peer=PROBE_SINK))
            if not reply.startswith("ok"):
                raise errors.AdminError(reply)

    interval = 1e9 / rate_hz
    probe_end = LEAD_IN_NS + int((warmup + count) * interval)
    load = None
    if load_fraction > 0:
        spec = LoadSpec(load_fraction, load_size, load_carrier)
        load = session.schedule_load(LOAD, LOAD_SINK, spec, probe_end + LEAD_IN_NS)
    handle = session.schedule_probe(PROBE, PROBE_SINK, probe_size or sdef.probe_size,
                                    rate_hz, count, warmup, start_ns=LEAD_IN_NS)
    session.run()
    probe = handle.result()
    if count and not probe.samples:
        raise errors.ZeroAcks(f"{PROBE}->{PROBE_SINK}")
    mean, std, n = summarize(probe.samples) if probe.samples else (0.0, 0.0, 0)
    row = BenchRow(sdef.name, "on" if on else "off", load_fraction, probe_carrier,
                   load_carrier, n, mean, std, probe.drops)
    return ScenarioResult(row, probe, load, session)


# -- real sockets ------------------------------------------------------------------

def run_rtt_probe(port, peer, size_bytes=1024, rate_hz=DEFAULT_RATE_HZ, count=100,
                  warmup=DEFAULT_WARMUP, ack_timeout=1.0) -> ProbeResult:
    """Ack-requested probes on a live channel; RTT on the sender's clock."""
    try:
        state = port.channel_info(peer, "output")
    except errors.NoSuchChannel as exc:
        raise errors.ChannelDown(peer) from exc
    if state.status != "active":
        raise errors.ChannelDown(f"{peer}: {state.status}")
    if count == 0 and warmup == 0:
        return ProbeResult()
    acks: dict[int, RttSample] = {}
    lock = threading.Lock()
    done = threading.Event()
    counted: list[int] = []
    before = state.counters.duplicates

    def sink(rec):
        with lock:
            acks[rec.message_id] = RttSample(rec.message_id, rec.send_ns, rec.ack_ns)
            if counted and len(counted) == count and all(m in acks for m in counted):
                done.set()

    port.set_ack_sink(peer, sink)
    payload = bytes(size_bytes)
    interval = 1.0 / rate_hz
    t0 = time.monotonic()
    try:
        for i in range(warmup + count):
            delay = t0 + i * interval - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            outcome, mid = port.publish_to(peer, payload, ack=True)
            if mid is None:
                raise errors.ChannelDown(f"{peer}: {outcome}")
            if i >= warmup:
                with lock:
                    counted.append(mid)
        if count:
            with lock:
                if all(m in acks for m in counted):
                    done.set()
            done.wait(ack_timeout)
    finally:
        port.set_ack_sink(peer, None)
    with lock:
        samples = [acks[m] for m in counted if m in acks]
    dups = port.channel_info(peer, "output").counters.duplicates - before
    result = ProbeResult(samples, len(counted) - len(samples), dups)
    if count and not samples:
        raise errors.ZeroAcks(f"none of {count} probes to {peer} acknowledged")
    return result


def run_load(port, peer, spec: LoadSpec, duration_s: float, bandwidth=GIGABIT,
             stop: threading.Event | None = None) -> LoadReport:
    """Pace whole messages at fraction x bandwidth for ``duration_s``."""
    rate = spec.byte_rate(bandwidth)
    report = LoadReport(rate, int(duration_s * 1e9))
    if duration_s <= 0:
        return report
    sent_before = port.channel_info(peer, "output").counters.sent
    payload = bytes(spec.message_size_bytes)
    interval = spec.message_size_bytes / rate
    t0 = time.monotonic()
    for k in itertools.count():
        target = t0 + k * interval
        if target - t0 >= duration_s or (stop is not None and stop.is_set()):
            break
        delay = target - time.monotonic()
        if delay > 0:
            time.sleep(delay)
        port.publish_to(peer, payload)
        report.messages += 1
        report.emitted_bytes += spec.message_size_bytes
    elapsed = time.monotonic() - t0
    sent = port.channel_info(peer, "output").counters.sent - sent_before
    report.delivered_bytes = sent * spec.message_size_bytes
    report.duration_ns = int(elapsed * 1e9)
    return report


def run_real(scenario, qos, load_fraction, carriers=("tcp", "tcp"), *, count=100,
             warmup=DEFAULT_WARMUP, rate_hz=DEFAULT_RATE_HZ, probe_size=None,
             load_size=DEFAULT_LOAD_SIZE, bandwidth=GIGABIT, nameserver=None) -> ScenarioResult:
    """Same wiring over loopback sockets. Host-dependent, advisory only."""
    from ..nameserver import NameServer
    from ..port import AdminSession, open_port

    sdef = scenario_def(scenario)
    on = _qos_flag(qos)
    probe_carrier, load_carrier = carriers
    own_ns = None
    if nameserver is None:
        own_ns = NameServer().start()
        nameserver = own_ns.address
    ports = {}
    try:
        for name in sdef.roles:
            ports[name] = open_port(name, nameserver)
        ports[PROBE].connect(PROBE_SINK, probe_carrier)
        ports[LOAD].connect(LOAD_SINK, load_carrier)
        if on:
            with AdminSession(ports[PROBE].endpoint) as admin:
                for cmd in QOS_COMMANDS:
                    reply = admin.request(cmd.format(peer=PROBE_SINK))
                    if not reply.startswith("ok"):
                        raise errors.AdminError(reply)
        load = None
        stop = threading.Event()
        loader = None
        if load_fraction > 0:
            spec = LoadSpec(load_fraction, load_size, load_carrier)
            duration = (warmup + count) / rate_hz + 2.0
            holder = {}
            loader = threading.Thread(
                target=lambda: holder.setdefault(
                    "r", run_load(ports[LOAD], LOAD_SINK, spec, duration, bandwidth, stop)),
                daemon=True)
            loader.start()
            time.sleep(LEAD_IN_NS / 1e9)
        probe = run_rtt_probe(ports[PROBE], PROBE_SINK, probe_size or sdef.probe_size,
                              rate_hz, count, warmup)
        if loader is not None:
            stop.set()
            loader.join()
            load = holder.get("r")
    finally:
        for p in ports.values():
            p.close()
        if own_ns is not None:
            own_ns.stop()
    mean, std, n = summarize(probe.samples)
    row = BenchRow(sdef.name, "on" if on else "off", load_fraction, probe_carrier,
                   load_carrier, n, mean, std, probe.drops)
    return ScenarioResult(row, probe, load)


def run_scenario(topology, qos, load_fraction, carriers=("tcp", "tcp"), *, emulate=True,
                 **kwargs) -> BenchReport:
    """One configuration -> a one-row report. ``topology`` is nic or switch."""
    runner = run_emulated if emulate else run_real
    result = runner(topology, qos, load_fraction, carriers, **kwargs)
    return BenchReport(result.row.scenario, [result.row])


def configurations(qos_values, loads, carrier_pairs):
    for pair in carrier_pairs:
        for load in loads:
            for qos in qos_values:
                yield qos, load, pair


def run_matrix(scenario, qos_values=("on", "off"), loads=(0.2, 0.7),
               carrier_pairs=(("tcp", "tcp"),), *, emulate=True, on_row=None,
               **kwargs) -> BenchReport:
    """Cross product of configurations, one row each, in a stable order."""
    for pair in carrier_pairs:
        for c in pair:
            if c not in CARRIERS:
                raise errors.CarrierUnsupported(c)
    report = BenchReport(scenario_def(scenario).name)
    for qos, load, pair in configurations(qos_values, loads, carrier_pairs):
        row = run_scenario(scenario, qos, load, pair, emulate=emulate, **kwargs).rows[0]
        report.rows.append(row)
        if on_row:
            on_row(row)
    return report


def topology_loader(path):
    """Factory for run_emulated(emu_topology=...) from a topology file."""
    return lambda seed: load_topology(path, seed)
