"""Emulator checks shared by the unit tests and the acceptance run."""

import random

from prioport.netemu import GIGABIT, BandQueue, EmuPacket, EmuTopology, serialization_ns

from oracles import ReferenceQueue, op_sequences, probe_departure

BAND_TOS = {0: 0x90, 1: 0x00, 2: 0x28}
MAX_PACKET = 1500


def strict_priority_divergences(max_packets=6, capacity=None):
    """Run every interleaving through BandQueue and the reference queue.

    Returns (sequences checked, list of divergences).
    """
    capacity = capacity or max_packets
    bad = []
    n = 0
    for seq in op_sequences(max_packets):
        n += 1
        q, ref = BandQueue(capacity), ReferenceQueue(capacity)
        resident = []
        for step, op in enumerate(seq):
            if op is None:
                got, want = q.dequeue(), ref.dequeue()
                if (got is None) != (want is None) or (got is not None and got.payload != want[2]):
                    bad.append((seq, step))
                    break
                if got is not None:
                    resident.remove(got.band)
                    if any(b < got.band for b in resident):
                        bad.append((seq, step, "lower band served first"))
                        break
            else:
                p = EmuPacket(BAND_TOS[op], 100, payload=step)
                if q.enqueue(p) != ref.enqueue(op, step):
                    bad.append((seq, step, "admission"))
                    break
                if p.enqueue_seq >= 0 and p in q.bands[op]:
                    resident.append(op)
            if len(q) != len(ref.items):
                bad.append((seq, step, "occupancy"))
                break
    return n, bad


def hol_trial(k, rng, rate=GIGABIT):
    """k max-size band-1 packets and one band-0 probe, random admission times.

    Returns (probe queueing delay, oracle start time, engine start time).
    """
    ser = serialization_ns(MAX_PACKET, rate)
    topo = EmuTopology(record_hops=True)
    topo.add_host("A")
    topo.add_host("B")
    topo.add_link("A", "B", rate)
    horizon = max(1, k) * ser
    low_times = [rng.randrange(0, horizon + 1) for _ in range(k)]
    # ties with a low admission or a service boundary are the interesting cases
    choices = [rng.randrange(0, horizon + 1)] + low_times + [i * ser for i in range(k + 1)]
    probe_time = rng.choice(choices)
    order = list(range(k))
    rng.shuffle(order)
    for i in order:
        p = topo.make_packet("A", "B", 0x00, MAX_PACKET)
        topo.schedule(low_times[i], topo.admit, "A", p)
    probe = topo.make_packet("A", "B", 0x90, MAX_PACKET)
    topo.schedule(probe_time, topo.admit, "A", probe)
    topo.run()
    start = probe.hops[0][2]
    # the oracle serves low packets in admission order; ties at one instant
    # do not matter for the probe's start
    expect = probe_departure(low_times, probe_time, ser)
    return probe.queue_delay_ns, expect, start, ser


def hol_violations(trials=100, ks=range(0, 11), seed=0):
    rng = random.Random(seed)
    bad = []
    for k in ks:
        for t in range(trials):
            delay, expect, start, ser = hol_trial(k, rng)
            if delay > ser or start != expect:
                bad.append((k, t, delay, expect, start))
    return bad
