"""Real-time driver that lets threaded ports talk through an EmuTopology.

The topology's virtual clock is slaved to the monotonic clock. Channel
threads hand frames in with ``send``; a driver thread steps the topology
and drops completed frames into per-endpoint mailboxes.
"""

from __future__ import annotations

import itertools
import queue
import threading
import time

from .. import errors
from .core import EmuTopology


class EmuEndpoint:
    def __init__(self, network: "EmuNetwork", host: str, key: str):
        self.network = network
        self.host = host
        self.key = key
        self.mailbox: queue.Queue = queue.Queue()
        self.closed = False

    @property
    def address(self) -> tuple[str, str]:
        return self.host, self.key

    def send(self, dst: tuple[str, str], data: bytes, *, tos=0, priority=0, carrier="tcp"):
        self.network.send(self, dst, data, tos=tos, priority=priority, carrier=carrier)

    def recv(self, timeout=None) -> bytes | None:
        try:
            return self.mailbox.get(timeout=timeout)
        except queue.Empty:
            return None

    def close(self):
        self.closed = True
        self.network.unbind(self)


class EmuNetwork:
    def __init__(self, topology: EmuTopology, speed: float = 1.0):
        self.topology = topology
        self.speed = speed
        self._cond = threading.Condition()
        self._endpoints: dict[tuple[str, str], EmuEndpoint] = {}
        self._unpaused: dict[str, threading.Event] = {}
        self._ids = itertools.count()
        self._t0 = time.monotonic_ns()
        self._running = False
        self._thread = None

    def _virtual_now(self) -> int:
        if not self._running:
            return self.topology.now
        return int((time.monotonic_ns() - self._t0) * self.speed)

    def _advance(self):
        target = self._virtual_now()
        if target > self.topology.now:
            self.topology.step(target)
        else:
            self.topology.run(self.topology.now)

    def start(self):
        self._t0 = time.monotonic_ns() - int(self.topology.now / self.speed)
        self._running = True
        self._thread = threading.Thread(target=self._loop, name="emu-driver", daemon=True)
        self._thread.start()
        return self

    def stop(self):
        with self._cond:
            self._running = False
            self._cond.notify_all()
        if self._thread:
            self._thread.join()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def _loop(self):
        with self._cond:
            while self._running:
                self._advance()
                nxt = self.topology.next_event_time()
                wait = 0.05
                if nxt is not None:
                    wait = min(wait, max(0.0, (nxt - self.topology.now) / self.speed / 1e9))
                self._cond.wait(wait)

    # -- endpoints ---------------------------------------------------------

    def bind(self, host: str, key: str | None = None) -> EmuEndpoint:
        self.topology.host(host)
        with self._cond:
            key = key or f"ep{next(self._ids)}"
            if (host, key) in self._endpoints:
                raise errors.BindFailure(f"emu endpoint {host}/{key} in use")
            ep = self._endpoints[(host, key)] = EmuEndpoint(self, host, key)
        return ep

    def unbind(self, ep: EmuEndpoint):
        with self._cond:
            self._endpoints.pop(ep.address, None)

    def send(self, src: EmuEndpoint, dst, data: bytes, *, tos=0, priority=0, carrier="tcp"):
        dst = tuple(dst)

        def delivered(xfer):
            target = self._endpoints.get(dst)
            if target is not None:
                target.mailbox.put(data)

        with self._cond:
            self._advance()
            self.topology.send_message(src.host, dst[0], len(data), tos, priority=priority,
                                       carrier=carrier, on_delivered=delivered)
            self._cond.notify_all()

    # -- stalls ------------------------------------------------------------

    def _gate(self, host) -> threading.Event:
        with self._cond:
            ev = self._unpaused.get(host)
            if ev is None:
                ev = self._unpaused[host] = threading.Event()
                ev.set()
            return ev

    def pause(self, host: str):
        """Stall a host: its channel threads block before taking new messages."""
        self.topology.host(host)
        self._gate(host).clear()
        with self._cond:
            self.topology.pause(host)

    def resume(self, host: str):
        with self._cond:
            self.topology.resume(host)
            self._cond.notify_all()
        self._gate(host).set()

    def wait_unpaused(self, host: str, timeout=None) -> bool:
        return self._gate(host).wait(timeout)
