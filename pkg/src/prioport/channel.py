"""Per-channel state shared by the port runtime and the emulated bench."""

from __future__ import annotations

import copy
import threading
from collections import deque
from dataclasses import dataclass, field

from .qos import PriorityClass, SchedulingProperties

DEFAULT_CAPACITY = 64


@dataclass
class Counters:
    enqueued: int = 0
    sent: int = 0
    received: int = 0
    dropped: int = 0
    acks: int = 0
    errors: int = 0
    duplicates: int = 0


@dataclass
class ChannelState:
    peer: str
    direction: str                      # "input" | "output"
    carrier: str
    capacity: int = DEFAULT_CAPACITY
    queued: int = 0
    sched: SchedulingProperties = field(default_factory=SchedulingProperties)
    packet_priority: PriorityClass | None = PriorityClass.NORMAL
    dscp: int = 0
    tos: int = 0
    qos_degraded: str | None = None
    counters: Counters = field(default_factory=Counters)
    status: str = "connecting"          # connecting | active | closed | degraded


class DropOldestQueue:
    """Bounded FIFO; a put into a full queue evicts the oldest item.

    ``put`` returns the evicted item (or None) so callers can count drops
    under their own lock.
    """

    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items = deque()

    def put(self, item):
        evicted = None
        if len(self._items) >= self.capacity:
            evicted = self._items.popleft()
        self._items.append(item)
        return evicted

    def get(self):
        return self._items.popleft() if self._items else None

    def resize(self, capacity: int) -> list:
        """Change capacity; returns the oldest items evicted to fit."""
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        evicted = []
        while len(self._items) > capacity:
            evicted.append(self._items.popleft())
        return evicted

    def drain(self) -> list:
        items = list(self._items)
        self._items.clear()
        return items

    def __len__(self):
        return len(self._items)

    def __bool__(self):
        return bool(self._items)


class Channel:
    """Base for anything admin commands can target.

    Subclasses override ``apply_tos``/``apply_sched`` to push the setting
    into a socket, an OS thread or the emulator; each returns a degraded
    reason or None.
    """

    def __init__(self, state: ChannelState):
        self.state = state
        self.lock = threading.RLock()

    def apply_tos(self, tos: int) -> str | None:
        return None

    def apply_sched(self, props: SchedulingProperties) -> str | None:
        return None

    def set_capacity(self, capacity: int) -> None:
        with self.lock:
            self.state.capacity = capacity

    def snapshot(self) -> ChannelState:
        with self.lock:
            return copy.deepcopy(self.state)
