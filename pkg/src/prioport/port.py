"""Ports: named endpoints holding any number of input and output channels.

Every channel owns a dedicated thread (a sender for outputs, a receiver
for inputs); that thread is what thread-level QoS reschedules. ``publish``
only enqueues onto each output channel's bounded queue and returns.

All connections start as TCP to the destination's listener with a
HANDSHAKE frame naming the session role and carrier. Data sessions over
``tcp`` keep using that connection; ``udp`` and ``emu`` move data to a
datagram socket or an emulated endpoint and keep the TCP connection only
as a liveness signal. Admin sessions carry ADMIN_REQUEST/ADMIN_REPLY text.
"""

from __future__ import annotations

import itertools
import logging
import socket
import threading
import time
from dataclasses import dataclass

from . import errors
from .channel import DEFAULT_CAPACITY, Channel, ChannelState, DropOldestQueue
from .nameserver import EndpointTriplet, NameClient, check_port_name
from .qos import apply_socket_tos, apply_thread_sched, execute_admin_text
from .wire import (
    CARRIERS,
    FLAG_ACK_REQUESTED,
    UDP_MAX_PAYLOAD,
    DatagramConnection,
    Frame,
    FrameType,
    HandshakeInfo,
    SessionRole,
    StreamConnection,
    decode_frame,
    encode_frame,
    perform_handshake,
)

log = logging.getLogger(__name__)

POLL = 0.05


@dataclass(frozen=True)
class Message:
    payload: bytes
    publish_timestamp_ns: int
    source: str = ""
    message_id: int = 0


@dataclass(frozen=True)
class AckRecord:
    message_id: int
    send_ns: int
    ack_ns: int


class EmuConnection:
    """Frame connection over an emulated endpoint; quacks like the socket ones."""

    def __init__(self, endpoint, peer, carrier="tcp"):
        self.endpoint = endpoint
        self.peer = tuple(peer)
        self.carrier = carrier
        self.tos = 0
        self.priority = 0
        self.closed = False

    def writable(self) -> bool:
        return self.endpoint.network.wait_unpaused(self.endpoint.host, 0)

    def send_frame(self, frame: Frame) -> None:
        net = self.endpoint.network
        while not net.wait_unpaused(self.endpoint.host, POLL):
            if self.closed:
                raise errors.ConnectionClosed("closed while stalled")
        self.endpoint.send(self.peer, encode_frame(frame), tos=self.tos,
                           priority=self.priority, carrier=self.carrier)

    def recv_frame(self, timeout=None) -> Frame | None:
        if self.closed:
            raise errors.ConnectionClosed("closed")
        data = self.endpoint.recv(timeout)
        if data is None:
            return None
        return decode_frame(data)[0]

    def close(self):
        self.closed = True
        self.endpoint.close()


def _writable(conn) -> bool:
    check = getattr(conn, "writable", None)
    return check() if check else True


class _ChannelBase(Channel):
    def __init__(self, port, state, data, control=None):
        super().__init__(state)
        self.port = port
        self.data = data
        self.control = control
        self.cond = threading.Condition(self.lock)
        self.tid = None
        self._tid_ready = threading.Event()
        self._closing = False
        self._threads: list[threading.Thread] = []

    def _spawn(self, target, name):
        t = threading.Thread(target=target, name=name, daemon=True)
        self._threads.append(t)
        t.start()
        return t

    def _mark_thread(self):
        self.tid = threading.get_native_id()
        self._tid_ready.set()

    def apply_tos(self, tos):
        conn = self.data
        if isinstance(conn, EmuConnection):
            conn.tos = tos
            return None
        return apply_socket_tos(conn.sock, tos)

    def apply_sched(self, props):
        if isinstance(self.data, EmuConnection):
            self.data.priority = props.effective_priority
        self._tid_ready.wait(1.0)
        if self.tid is None:
            return "no-thread"
        return apply_thread_sched(self.tid, props)

    def _watch_control(self):
        # separate control connection: EOF means the peer went away
        try:
            while not self._closing:
                self.control.recv_frame(POLL * 4)
        except errors.PrioportError:
            pass
        if not self._closing:
            self.port._channel_lost(self)

    def _close_transport(self):
        for conn in (self.data, self.control):
            if conn is not None:
                try:
                    conn.close()
                except OSError:
                    pass

    def _join(self):
        me = threading.current_thread()
        for t in self._threads:
            if t is not me:
                t.join(2.0)


class OutputChannel(_ChannelBase):
    def __init__(self, port, peer, carrier, data, control, capacity=DEFAULT_CAPACITY):
        super().__init__(port, ChannelState(peer, "output", carrier, capacity), data, control)
        self.queue = DropOldestQueue(capacity)
        self.in_hand = None
        self._ids = itertools.count()
        self._pending_acks: dict[int, int] = {}
        self.ack_sink = None            # callable(AckRecord)

    def start(self):
        self._spawn(self._send_loop, f"send:{self.port.name}->{self.state.peer}")
        self._spawn(self._ack_loop, f"ack:{self.port.name}->{self.state.peer}")
        if self.control is not None:
            self._spawn(self._watch_control, f"ctl:{self.port.name}->{self.state.peer}")
        self._tid_ready.wait(1.0)
        with self.lock:
            self.state.status = "active"

    def enqueue(self, payload: bytes, timestamp_ns: int, flags: int = 0) -> str:
        return self.enqueue_with_id(payload, timestamp_ns, flags)[0]

    def enqueue_with_id(self, payload, timestamp_ns, flags=0) -> tuple[str, int | None]:
        with self.cond:
            if self._closing:
                return "closed", None
            if self.state.carrier == "udp" and len(payload) > UDP_MAX_PAYLOAD:
                self.state.counters.errors += 1
                return "rejected", None
            mid = next(self._ids)
            evicted = self.queue.put((mid, timestamp_ns, flags, payload))
            self.state.counters.enqueued += 1
            if evicted is not None:
                self.state.counters.dropped += 1
            self.cond.notify()
            return ("dropped-oldest" if evicted is not None else "queued"), mid

    def set_capacity(self, capacity):
        with self.cond:
            self.state.capacity = capacity
            self.state.counters.dropped += len(self.queue.resize(capacity))

    def snapshot(self):
        with self.lock:
            self.state.queued = len(self.queue) + (self.in_hand is not None)
            return super().snapshot()

    def _send_loop(self):
        self._mark_thread()
        while True:
            with self.cond:
                while not self._closing and not (self.queue and _writable(self.data)):
                    self.cond.wait(POLL)
                if self._closing:
                    return
                item = self.in_hand = self.queue.get()
            mid, ts, flags, payload = item
            if flags & FLAG_ACK_REQUESTED:
                with self.lock:
                    self._pending_acks[mid] = ts
            try:
                self.data.send_frame(Frame(FrameType.DATA, mid, ts, flags, payload))
            except errors.PrioportError as exc:
                with self.lock:
                    self.in_hand = None
                    self.state.counters.dropped += 1
                    self.state.counters.errors += 1
                    self._pending_acks.pop(mid, None)
                    if isinstance(exc, errors.ConnectionClosed):
                        self.state.status = "closed"
                if isinstance(exc, errors.ConnectionClosed):
                    if not self._closing:
                        self.port._channel_lost(self)
                    return
                continue
            with self.lock:
                self.in_hand = None
                self.state.counters.sent += 1

    def _ack_loop(self):
        try:
            while not self._closing:
                frame = self.data.recv_frame(POLL * 4)
                if frame is None:
                    continue
                if frame.frame_type != FrameType.ACK:
                    raise errors.ProtocolError(f"{frame.frame_type.name} on data session")
                now = time.monotonic_ns()
                with self.lock:
                    if self._pending_acks.pop(frame.message_id, None) is None:
                        self.state.counters.duplicates += 1
                        continue
                    self.state.counters.acks += 1
                    sink = self.ack_sink
                if sink is not None:
                    sink(AckRecord(frame.message_id, frame.timestamp_ns, now))
        except errors.PrioportError:
            if not self._closing:
                self.port._channel_lost(self)

    def close(self):
        with self.cond:
            if self._closing:
                return
            self._closing = True
            self.cond.notify_all()
        if isinstance(self.data, EmuConnection):
            self.data.closed = True
        self._join_sender()
        with self.lock:
            leftover = len(self.queue.drain()) + (self.in_hand is not None)
            self.in_hand = None
            self.state.counters.dropped += leftover
            self.state.status = "closed"
            self.state.queued = 0
        self._close_transport()
        self._join()

    def _join_sender(self):
        me = threading.current_thread()
        if self._threads and self._threads[0] is not me:
            self._threads[0].join(2.0)


class InputChannel(_ChannelBase):
    def __init__(self, port, peer, carrier, data, control, capacity=DEFAULT_CAPACITY):
        super().__init__(port, ChannelState(peer, "input", carrier, capacity), data, control)
        self.inbox = DropOldestQueue(capacity)

    def start(self):
        self._spawn(self._recv_loop, f"recv:{self.state.peer}->{self.port.name}")
        if self.control is not None:
            self._spawn(self._watch_control, f"ctl:{self.state.peer}->{self.port.name}")
        self._tid_ready.wait(1.0)
        with self.lock:
            self.state.status = "active"

    def set_capacity(self, capacity):
        with self.port._read_cond:
            with self.lock:
                self.state.capacity = capacity
                self.state.counters.dropped += len(self.inbox.resize(capacity))

    def snapshot(self):
        with self.port._read_cond:
            with self.lock:
                self.state.queued = len(self.inbox)
                return super().snapshot()

    def _recv_loop(self):
        self._mark_thread()
        try:
            while not self._closing:
                frame = self.data.recv_frame(POLL * 4)
                if frame is None:
                    continue
                if frame.frame_type != FrameType.DATA:
                    raise errors.ProtocolError(f"{frame.frame_type.name} on data session")
                msg = Message(frame.payload, frame.timestamp_ns, self.state.peer,
                              frame.message_id)
                with self.port._read_cond:
                    with self.lock:
                        self.state.counters.received += 1
                        if self.inbox.put(msg) is not None:
                            self.state.counters.dropped += 1
                    self.port._read_cond.notify_all()
                if frame.ack_requested:
                    self.data.send_frame(frame.ack())
        except errors.PrioportError:
            if not self._closing:
                self.port._channel_lost(self)

    def close(self):
        with self.lock:
            if self._closing:
                return
            self._closing = True
            self.state.status = "closed"
        if isinstance(self.data, EmuConnection):
            self.data.closed = True
        self._close_transport()
        self._join()


class Port:
    """A named port. Use ``open_port`` to create one."""

    def __init__(self, name, nameserver=None, host="127.0.0.1", listen_port=0,
                 capacity=DEFAULT_CAPACITY, emu=None, emu_host=None,
                 handshake_timeout=5.0):
        self.name = check_port_name(name)
        self.host = host
        self.capacity = capacity
        self.emu = emu
        self.emu_host = emu_host
        self.handshake_timeout = handshake_timeout
        self.nameserver = nameserver if isinstance(nameserver, NameClient) else \
            NameClient(nameserver)
        self._listen_port = listen_port
        self._lock = threading.RLock()
        self._read_cond = threading.Condition()
        self._outputs: dict[str, OutputChannel] = {}
        self._inputs: dict[str, InputChannel] = {}
        self._closed_states: dict[tuple[str, str], ChannelState] = {}
        self._rr = 0
        self._listener = None
        self._closed = False
        self._threads = []
        self.endpoint: EndpointTriplet | None = None

    # -- lifecycle ---------------------------------------------------------

    def open(self):
        try:
            self._listener = socket.create_server((self.host, self._listen_port))
        except OSError as exc:
            raise errors.BindFailure(str(exc)) from exc
        self._listener.settimeout(POLL * 4)
        self.endpoint = EndpointTriplet(self.host, self._listener.getsockname()[1], "tcp")
        try:
            self.nameserver.register(self.name, self.endpoint)
        except errors.ServerUnreachable as exc:
            self._listener.close()
            raise errors.BindFailure(f"name server unreachable: {exc}") from exc
        except errors.PrioportError:
            self._listener.close()
            raise
        t = threading.Thread(target=self._accept_loop, name=f"listen:{self.name}", daemon=True)
        self._threads.append(t)
        t.start()
        return self

    def close(self):
        with self._lock:
            if self._closed:
                return
            self._closed = True
            channels = list(self._outputs.values()) + list(self._inputs.values())
            self._outputs.clear()
            self._inputs.clear()
        for ch in channels:
            ch.close()
        with self._read_cond:
            self._read_cond.notify_all()
        try:
            self.nameserver.unregister(self.name)
        except errors.PrioportError:
            pass
        for t in self._threads:
            t.join(2.0)
        self._listener.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- connections -------------------------------------------------------

    def connect(self, dst: str, carrier: str = "tcp", endpoint=None) -> ChannelState:
        """Open an output channel to ``dst``.

        ``endpoint`` skips the name server (a triplet from an earlier lookup).
        """
        check_port_name(dst)
        if carrier not in CARRIERS:
            raise errors.CarrierUnsupported(carrier)
        if carrier == "emu" and self.emu is None:
            raise errors.CarrierUnsupported("this port has no emulated network")
        self._check_open()
        with self._lock:
            if dst in self._outputs:
                return self._outputs[dst].snapshot()
        if endpoint is None:
            try:
                endpoint = self.nameserver.lookup(dst)
            except errors.NotFound as exc:
                raise errors.LookupFailure(f"{dst}: not-found") from exc
            except errors.ServerUnreachable as exc:
                raise errors.LookupFailure(f"{dst}: {exc}") from exc
        endpoint = EndpointTriplet(*endpoint)
        try:
            sock = socket.create_connection((endpoint.host, endpoint.port_number),
                                            timeout=self.handshake_timeout)
        except OSError as exc:
            raise errors.HandshakeError(f"cannot reach {dst}: {exc}") from exc
        conn = StreamConnection(sock)
        extras, emu_ep = {}, None
        if carrier == "emu":
            emu_ep = self.emu.bind(self.emu_host)
            extras = {"emu_host": emu_ep.host, "emu_key": emu_ep.key}
        try:
            desc = perform_handshake(conn, HandshakeInfo(self.name, SessionRole.DATA_SESSION,
                                                         carrier, extras=extras),
                                     "initiator", timeout=self.handshake_timeout)
            if carrier == "tcp":
                data, control = conn, None
            elif carrier == "udp":
                usock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
                usock.bind((self.host, 0))
                data = DatagramConnection(usock, (endpoint.host, int(desc.extras["udp_port"])))
                control = conn
            else:
                data = EmuConnection(emu_ep, (desc.extras["emu_host"], desc.extras["emu_key"]))
                control = conn
        except (errors.PrioportError, KeyError, ValueError) as exc:
            conn.close()
            if emu_ep is not None:
                emu_ep.close()
            if isinstance(exc, errors.PrioportError):
                raise
            raise errors.HandshakeError(f"bad handshake reply: {exc}") from exc
        ch = OutputChannel(self, dst, carrier, data, control, self.capacity)
        with self._lock:
            if self._closed:
                ch._close_transport()
                raise errors.PortClosed(self.name)
            self._outputs[dst] = ch
        ch.start()
        return ch.snapshot()

    def disconnect(self, peer: str) -> None:
        with self._lock:
            ch = self._outputs.pop(peer, None) or self._inputs.pop(peer, None)
        if ch is None:
            raise errors.NoSuchChannel(peer)
        ch.close()
        with self._lock:
            self._closed_states[(peer, ch.state.direction)] = ch.snapshot()

    def _channel_lost(self, ch):
        """Peer vanished: retire the channel from a background thread."""
        with self._lock:
            table = self._outputs if ch.state.direction == "output" else self._inputs
            if table.get(ch.state.peer) is not ch:
                return
            del table[ch.state.peer]
        threading.Thread(target=self._retire, args=(ch,), daemon=True).start()

    def _retire(self, ch):
        ch.close()
        with self._lock:
            self._closed_states[(ch.state.peer, ch.state.direction)] = ch.snapshot()

    # -- data --------------------------------------------------------------

    def publish(self, payload: bytes, ack: bool = False) -> dict[str, str]:
        """Enqueue on every output channel; never waits for the network."""
        self._check_open()
        ts = time.monotonic_ns()
        flags = FLAG_ACK_REQUESTED if ack else 0
        payload = bytes(payload)
        with self._lock:
            channels = list(self._outputs.values())
        return {ch.state.peer: ch.enqueue(payload, ts, flags) for ch in channels}

    def publish_to(self, peer: str, payload: bytes, ack: bool = False) -> tuple[str, int | None]:
        """Enqueue on a single output channel; returns (outcome, message id)."""
        ch = self._output(peer)
        return ch.enqueue_with_id(bytes(payload), time.monotonic_ns(),
                                  FLAG_ACK_REQUESTED if ack else 0)

    def read(self, blocking: bool = True, timeout: float | None = None) -> Message | None:
        """Next message across input channels, round-robin between channels."""
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._read_cond:
            while True:
                if self._closed:
                    raise errors.PortClosed(self.name)
                msg = self._take()
                if msg is not None or not blocking:
                    return msg
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    raise errors.ReadTimeout(f"no message within {timeout}s")
                self._read_cond.wait(remaining if remaining is not None else POLL * 4)

    def _take(self):
        with self._lock:
            channels = list(self._inputs.values())
        n = len(channels)
        for i in range(n):
            ch = channels[(self._rr + i) % n]
            with ch.lock:
                msg = ch.inbox.get()
            if msg is not None:
                self._rr = (self._rr + i + 1) % n
                return msg
        return None

    # -- state -------------------------------------------------------------

    def _output(self, peer) -> OutputChannel:
        with self._lock:
            ch = self._outputs.get(peer)
        if ch is None:
            raise errors.NoSuchChannel(peer)
        return ch

    def find_channel(self, peer: str, direction: str | None = None):
        with self._lock:
            if direction in (None, "output") and peer in self._outputs:
                return self._outputs[peer]
            if direction in (None, "input") and peer in self._inputs:
                return self._inputs[peer]
        raise errors.NoSuchChannel(peer)

    def channel_info(self, peer: str, direction: str | None = None) -> ChannelState:
        return self.find_channel(peer, direction).snapshot()

    def closed_channel_info(self, peer: str, direction: str = "output") -> ChannelState:
        with self._lock:
            try:
                return self._closed_states[(peer, direction)]
            except KeyError:
                raise errors.NoSuchChannel(peer) from None

    def channels(self) -> list[ChannelState]:
        with self._lock:
            chans = list(self._outputs.values()) + list(self._inputs.values())
        return [c.snapshot() for c in chans]

    def set_ack_sink(self, peer: str, sink) -> None:
        self._output(peer).ack_sink = sink

    def admin(self, text: str) -> str:
        """Run one admin command locally, as a remote admin session would."""
        return execute_admin_text(self, text)

    def _check_open(self):
        if self._closed:
            raise errors.PortClosed(self.name)

    # -- accepting ---------------------------------------------------------

    def _accept_loop(self):
        while not self._closed:
            try:
                sock, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            t = threading.Thread(target=self._serve, args=(sock,), daemon=True,
                                 name=f"session:{self.name}")
            t.start()

    def _serve(self, sock):
        sock.settimeout(None)
        conn = StreamConnection(sock)
        prepared = {}

        def accept(request: HandshakeInfo):
            if request.session_role is SessionRole.ADMIN_SESSION:
                return {}
            with self._lock:
                if request.source_port_name in self._inputs:
                    raise errors.RoleRejected("already connected")
            if request.requested_carrier == "udp":
                usock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
                usock.bind((self.host, 0))
                prepared["data"] = DatagramConnection(usock)
                return {"udp_port": usock.getsockname()[1]}
            if request.requested_carrier == "emu":
                if self.emu is None:
                    raise errors.CarrierUnsupported("no emulated network here")
                try:
                    peer = (request.extras["emu_host"], request.extras["emu_key"])
                except KeyError:
                    raise errors.HandshakeError("emu handshake without address") from None
                ep = self.emu.bind(self.emu_host)
                prepared["data"] = EmuConnection(ep, peer)
                return {"emu_host": ep.host, "emu_key": ep.key}
            return {}

        try:
            desc = perform_handshake(conn, HandshakeInfo(self.name), "acceptor",
                                     timeout=self.handshake_timeout, accept=accept)
        except errors.PrioportError as exc:
            log.debug("%s: handshake refused: %s", self.name, exc)
            conn.close()
            if "data" in prepared:
                prepared["data"].close()
            return
        if desc.role is SessionRole.ADMIN_SESSION:
            self._admin_loop(conn)
            return
        if desc.carrier == "tcp":
            data, control = conn, None
        else:
            data, control = prepared["data"], conn
        ch = InputChannel(self, desc.peer_name, desc.carrier, data, control, self.capacity)
        with self._lock:
            if self._closed or desc.peer_name in self._inputs:
                ch._close_transport()
                return
            self._inputs[desc.peer_name] = ch
        ch.start()

    def _admin_loop(self, conn):
        try:
            while not self._closed:
                frame = conn.recv_frame(POLL * 4)
                if frame is None:
                    continue
                if frame.frame_type != FrameType.ADMIN_REQUEST:
                    raise errors.ProtocolError(f"{frame.frame_type.name} on admin session")
                reply = self.admin(frame.payload.decode("utf-8", "replace"))
                conn.send_frame(Frame(FrameType.ADMIN_REPLY, frame.message_id,
                                      time.monotonic_ns(), 0, reply.encode()))
        except errors.PrioportError:
            pass
        finally:
            conn.close()


def open_port(name: str, nameserver=None, **config) -> Port:
    """Create, bind and register a port. Nothing is left behind on failure."""
    return Port(name, nameserver, **config).open()


class AdminSession:
    """Client side of an admin session with a remote port."""

    def __init__(self, endpoint, client_name="/admin", timeout=5.0):
        endpoint = EndpointTriplet(*endpoint)
        try:
            sock = socket.create_connection((endpoint.host, endpoint.port_number),
                                            timeout=timeout)
        except OSError as exc:
            raise errors.HandshakeError(f"cannot reach admin endpoint: {exc}") from exc
        self.conn = StreamConnection(sock)
        self.timeout = timeout
        self._ids = itertools.count()
        try:
            perform_handshake(self.conn, HandshakeInfo(client_name, SessionRole.ADMIN_SESSION),
                              "initiator", timeout=timeout)
        except errors.PrioportError:
            self.conn.close()
            raise

    def request(self, text: str) -> str:
        mid = next(self._ids)
        self.conn.send_frame(Frame(FrameType.ADMIN_REQUEST, mid, time.monotonic_ns(), 0,
                                   text.encode()))
        frame = self.conn.recv_frame(self.timeout)
        if frame is None:
            raise errors.HandshakeTimeout("no admin reply")
        if frame.frame_type != FrameType.ADMIN_REPLY or frame.message_id != mid:
            raise errors.ProtocolError("unexpected admin reply")
        return frame.payload.decode("utf-8", "replace")

    def close(self):
        self.conn.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def admin_session(target: str, nameserver=None, timeout=5.0) -> AdminSession:
    client = nameserver if isinstance(nameserver, NameClient) else NameClient(nameserver)
    return AdminSession(client.lookup(target), timeout=timeout)


def connect(src: str, dst: str, carrier: str = "tcp", nameserver=None) -> str:
    """Ask port ``src`` (possibly in another process) to connect to ``dst``."""
    with admin_session(src, nameserver) as session:
        return session.request(f"connect {dst} {carrier}")


def disconnect(src: str, dst: str, nameserver=None) -> str:
    with admin_session(src, nameserver) as session:
        return session.request(f"disconnect {dst}")
