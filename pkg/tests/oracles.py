"""Independent reference implementations used to check the library.

Nothing here imports the code under test except for error classes and
plain data types; the logic is rewritten from the formats and rules.
"""

import itertools
import random

# -- frame layout -------------------------------------------------------------

TYPES = {0, 1, 2, 3, 4}


def hand_encode(ftype, mid, ts, flags, payload):
    out = bytearray(b"\x59\x50\x01")
    out.append(ftype)
    out.append(flags)
    out += mid.to_bytes(8, "big")
    out += ts.to_bytes(8, "big")
    out += len(payload).to_bytes(4, "big")
    return bytes(out + payload)


def classify(data):
    """What a correct decoder must say about ``data``, byte by byte."""
    if len(data) >= 1 and data[0] != 0x59:
        return "bad-magic"
    if len(data) >= 2 and data[1] != 0x50:
        return "bad-magic"
    if len(data) >= 3 and data[2] != 1:
        return "unknown-version"
    if len(data) >= 4 and data[3] not in TYPES:
        return "unknown-type"
    if len(data) < 25:
        return "truncated"
    length = int.from_bytes(data[21:25], "big")
    if len(data) < 25 + length:
        return "truncated"
    return ("ok", 25 + length, data[3], int.from_bytes(data[5:13], "big"),
            int.from_bytes(data[13:21], "big"), data[4], bytes(data[25:25 + length]))


def fuzz_inputs(n, seed=0):
    """Random byte strings biased towards near-valid frames."""
    rng = random.Random(seed)
    for i in range(n):
        kind = i % 4
        if kind == 0:
            yield bytes(rng.getrandbits(8) for _ in range(rng.randrange(0, 40)))
            continue
        payload = bytes(rng.getrandbits(8) for _ in range(rng.randrange(0, 16)))
        frame = bytearray(hand_encode(rng.randrange(5), rng.getrandbits(64), rng.getrandbits(64),
                                      rng.getrandbits(8), payload))
        if kind == 1:
            frame = frame[:rng.randrange(0, len(frame) + 1)]
        elif kind == 2:
            for _ in range(rng.randrange(1, 3)):
                frame[rng.randrange(len(frame))] = rng.getrandbits(8)
        else:
            frame += bytes(rng.getrandbits(8) for _ in range(rng.randrange(0, 8)))
        yield bytes(frame)


# -- strict priority ----------------------------------------------------------

class ReferenceQueue:
    """Strict priority by brute force: the resident packet with the smallest
    (band, arrival) wins."""

    def __init__(self, capacity):
        self.capacity = capacity
        self.items = []
        self.arrivals = 0

    def enqueue(self, band, tag):
        if sum(1 for b, _, _ in self.items if b == band) >= self.capacity:
            return False
        self.items.append((band, self.arrivals, tag))
        self.arrivals += 1
        return True

    def dequeue(self):
        if not self.items:
            return None
        best = min(self.items, key=lambda it: (it[0], it[1]))
        self.items.remove(best)
        return best


def op_sequences(max_packets):
    """Every enqueue/dequeue interleaving of up to ``max_packets`` packets,
    with each packet in any of the three bands.

    A sequence is a tuple of band numbers (enqueue) and None (dequeue).
    Each one drains the queue and ends with a dequeue on empty; shorter
    interleavings are prefixes of these, and checks run after every step.
    """
    def shapes(n):
        def rec(prefix, e, d):
            if e == n:
                yield prefix + "D" * (e - d + 1)
                return
            yield from rec(prefix + "E", e + 1, d)
            if d < e:
                yield from rec(prefix + "D", e, d + 1)
        yield from rec("", 0, 0)

    for n in range(max_packets + 1):
        for shape in shapes(n):
            for bands in itertools.product(range(3), repeat=n):
                it = iter(bands)
                yield tuple(next(it) if c == "E" else None for c in shape)


# -- head-of-line -------------------------------------------------------------

def probe_departure(low_admits, probe_admit, ser):
    """Brute-force single-link schedule.

    ``low_admits`` are admission times of band-1 packets, ``probe_admit``
    the band-0 probe's, all with serialization time ``ser``. Simulates the
    link packet by packet: at each decision instant pick the probe if it is
    present, else the earliest low packet. Returns the probe's start time.
    """
    pending = sorted((t, i) for i, t in enumerate(low_admits))
    t = 0
    while True:
        arrived = [p for p in pending if p[0] <= t]
        if probe_admit <= t:
            return t
        if arrived:
            pending.remove(arrived[0])
            t += ser
            continue
        nxt = min([probe_admit] + [p[0] for p in pending])
        t = max(t, nxt)
