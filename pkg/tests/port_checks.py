"""Port runtime checks shared by the unit tests and the acceptance run."""

import random
import statistics
import time

from prioport.nameserver import NameServer
from prioport.netemu import EmuNetwork
from prioport.port import open_port

from conftest import two_host_topology


def wait_for(pred, timeout=5.0, interval=0.005):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if pred():
            return True
        time.sleep(interval)
    return pred()


class EmuPair:
    """/pub on emulated host A feeding /sub on host B over the emu carrier."""

    def __init__(self, capacity=64):
        self.ns = NameServer().start()
        self.net = EmuNetwork(two_host_topology()).start()
        self.pub = open_port("/pub", self.ns.address, emu=self.net, emu_host="A",
                             capacity=capacity)
        self.sub = open_port("/sub", self.ns.address, emu=self.net, emu_host="B",
                             capacity=100_000)
        self.pub.connect("/sub", "emu")

    def close(self):
        self.pub.close()
        self.sub.close()
        self.net.stop()
        self.ns.stop()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def stalled_publish_median(calls=1000):
    """Median seconds per publish into a channel whose host is stalled."""
    with EmuPair() as env:
        env.net.pause("A")
        times = []
        payload = b"x" * 256
        for _ in range(calls):
            t0 = time.perf_counter()
            env.pub.publish(payload)
            times.append(time.perf_counter() - t0)
        st = env.pub.channel_info("/sub")
        env.net.resume("A")
        return statistics.median(times), st


def conservation_failures(trials=1000, seed=0):
    """Randomized publish/stall/drain/resize schedules on one live channel.

    After every trial the output counters must satisfy
    enqueued = sent + dropped + queued exactly. While the host is stalled
    the drop count is also predicted exactly from the queue model.
    """
    rng = random.Random(seed)
    failures = []
    with EmuPair(capacity=16) as env:
        pub, net = env.pub, env.net
        paused = False
        for trial in range(trials):
            for _ in range(rng.randrange(1, 5)):
                op = rng.random()
                if op < 0.45:
                    n = rng.randrange(1, 40)
                    before = pub.channel_info("/sub")
                    for _ in range(n):
                        pub.publish(b"m")
                    if paused:
                        after = pub.channel_info("/sub")
                        cap = after.capacity
                        want = max(0, before.queued + n - cap)
                        got = after.counters.dropped - before.counters.dropped
                        if got != want or after.queued != min(cap, before.queued + n):
                            failures.append((trial, "stalled model", want, got))
                elif op < 0.6:
                    net.pause("A")
                    paused = True
                elif op < 0.8:
                    net.resume("A")
                    paused = False
                elif op < 0.9:
                    pub.admin(f"prop set /sub (qlen {rng.randrange(1, 32)})")
                else:
                    net.resume("A")
                    paused = False
                    wait_for(lambda: pub.channel_info("/sub").queued == 0)
            st = pub.channel_info("/sub")
            c = st.counters
            if c.enqueued != c.sent + c.dropped + st.queued:
                failures.append((trial, c, st.queued))
        net.resume("A")
        wait_for(lambda: pub.channel_info("/sub").queued == 0)
        st = pub.channel_info("/sub")
        c = st.counters
        if c.enqueued != c.sent + c.dropped + st.queued or st.queued:
            failures.append(("final", c, st.queued))
        # and the subscriber saw exactly what was sent
        if not wait_for(lambda: env.sub.channel_info("/pub").counters.received == c.sent):
            failures.append(("received", env.sub.channel_info("/pub").counters, c.sent))
    return failures
