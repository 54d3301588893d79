"""Name server: symbolic port names to endpoint triplets.

Line protocol, one request per line::

    REGISTER <name> <host> <port> <carrier>   -> OK | ERR <reason>
    QUERY <name>                              -> OK <host> <port> <carrier> | ERR not-found
    UNREGISTER <name>                         -> OK
    LIST                                      -> OK <n>, then n lines "<name> <host> <port> <carrier>"
"""

from __future__ import annotations

import ipaddress
import logging
import os
import socket
import socketserver
import threading
from typing import NamedTuple

from . import errors
from .wire import CARRIERS

log = logging.getLogger(__name__)

DEFAULT_ADDRESS = ("127.0.0.1", 10000)
ENV_VAR = "PRIOPORT_NAMESERVER"


class EndpointTriplet(NamedTuple):
    host: str
    port_number: int
    carrier: str

    def __str__(self):
        return f"{self.host} {self.port_number} {self.carrier}"


def check_port_name(name: str) -> str:
    if not isinstance(name, str) or not name.startswith("/") or any(c.isspace() for c in name):
        raise errors.MalformedName(repr(name))
    return name


def check_endpoint(endpoint) -> EndpointTriplet:
    host, port_number, carrier = endpoint
    try:
        ipaddress.ip_address(host)
        port_number = int(port_number)
    except ValueError as exc:
        raise errors.NameServerError(f"bad endpoint: {exc}") from exc
    if not 1 <= port_number <= 65535:
        raise errors.NameServerError(f"port number {port_number} out of range")
    if carrier not in CARRIERS:
        raise errors.NameServerError(f"unknown carrier {carrier}")
    return EndpointTriplet(host, port_number, carrier)


def parse_address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"expected host:port, got {text!r}")
    return host, int(port)


def resolve_address(flag: str | None = None) -> tuple[str, int]:
    """--nameserver flag, then $PRIOPORT_NAMESERVER, then the default."""
    text = flag or os.environ.get(ENV_VAR)
    return parse_address(text) if text else DEFAULT_ADDRESS


class Registry:
    """The shared map. All access goes through one lock."""

    def __init__(self):
        self._lock = threading.Lock()
        self._entries: dict[str, EndpointTriplet] = {}

    def register(self, name, endpoint):
        name = check_port_name(name)
        endpoint = check_endpoint(endpoint)
        with self._lock:
            current = self._entries.get(name)
            if current is not None and current != endpoint:
                raise errors.NameAlreadyRegistered(name)
            self._entries[name] = endpoint
        return endpoint

    def lookup(self, name):
        with self._lock:
            endpoint = self._entries.get(name)
        if endpoint is None:
            raise errors.NotFound(name)
        return endpoint

    def unregister(self, name):
        with self._lock:
            self._entries.pop(name, None)

    def list(self):
        with self._lock:
            return list(self._entries.items())


class _Handler(socketserver.StreamRequestHandler):
    def setup(self):
        super().setup()
        with self.server.conn_lock:
            self.server.conns.add(self.connection)

    def finish(self):
        with self.server.conn_lock:
            self.server.conns.discard(self.connection)
        super().finish()

    def handle(self):
        registry = self.server.registry
        for raw in self.rfile:
            line = raw.decode("utf-8", "replace").strip()
            if not line:
                continue
            try:
                reply = self._dispatch(registry, line.split())
            except errors.PrioportError as exc:
                reply = f"ERR {exc.code}"
            self.wfile.write((reply + "\n").encode())
            self.wfile.flush()

    @staticmethod
    def _dispatch(registry, parts):
        verb, args = parts[0].upper(), parts[1:]
        if verb == "REGISTER" and len(args) == 4:
            registry.register(args[0], args[1:])
            return "OK"
        if verb == "QUERY" and len(args) == 1:
            return f"OK {registry.lookup(args[0])}"
        if verb == "UNREGISTER" and len(args) == 1:
            registry.unregister(args[0])
            return "OK"
        if verb == "LIST" and not args:
            entries = registry.list()
            return "\n".join([f"OK {len(entries)}"] + [f"{n} {e}" for n, e in entries])
        return "ERR bad-request"


class _Server(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, *args):
        self.conns = set()
        self.conn_lock = threading.Lock()
        super().__init__(*args)

    def close_connections(self):
        with self.conn_lock:
            conns = list(self.conns)
        for conn in conns:
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass


class NameServer:
    """Threaded TCP name server. ``port=0`` picks a free port."""

    def __init__(self, host="127.0.0.1", port=0):
        self.registry = Registry()
        self._server = _Server((host, port), _Handler)
        self._server.registry = self.registry
        self._thread = None

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    def start(self):
        self._thread = threading.Thread(target=self._server.serve_forever, args=(0.05,),
                                        name="nameserver", daemon=True)
        self._thread.start()
        return self

    def serve_forever(self):
        self._server.serve_forever(0.05)

    def stop(self):
        self._server.shutdown()
        self._server.server_close()
        self._server.close_connections()
        if self._thread:
            self._thread.join()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


class NameClient:
    """Blocking client. Safe to share between threads (one request at a time)."""

    def __init__(self, address=None, timeout=5.0):
        self.address = tuple(address) if address else resolve_address()
        self.timeout = timeout
        self._lock = threading.Lock()
        self._sock = None
        self._file = None

    def _connect(self):
        try:
            self._sock = socket.create_connection(self.address, timeout=self.timeout)
        except OSError as exc:
            raise errors.ServerUnreachable(f"{self.address}: {exc}") from exc
        self._file = self._sock.makefile("rb")

    def _drop(self):
        if self._sock is not None:
            self._file.close()
            self._sock.close()
        self._sock = self._file = None

    def _request(self, line):
        with self._lock:
            for attempt in (0, 1):
                if self._sock is None:
                    self._connect()
                try:
                    self._sock.sendall((line + "\n").encode())
                    reply = self._file.readline().decode().strip()
                    if not reply:
                        raise ConnectionError("server closed connection")
                    extra = []
                    if reply.startswith("OK ") and line == "LIST":
                        extra = [self._file.readline().decode().strip()
                                 for _ in range(int(reply.split()[1]))]
                    return reply, extra
                except OSError as exc:
                    self._drop()
                    if attempt:
                        raise errors.ServerUnreachable(str(exc)) from exc

    @staticmethod
    def _check(reply):
        if reply.startswith("ERR"):
            code = reply[4:].strip()
            for cls in (errors.NotFound, errors.NameAlreadyRegistered, errors.MalformedName):
                if cls.code == code:
                    raise cls(code)
            raise errors.NameServerError(code)
        return reply[3:].split()

    def register(self, name, endpoint):
        name = check_port_name(name)
        endpoint = check_endpoint(endpoint)
        self._check(self._request(f"REGISTER {name} {endpoint}")[0])
        return endpoint

    def lookup(self, name) -> EndpointTriplet:
        check_port_name(name)
        host, port, carrier = self._check(self._request(f"QUERY {name}")[0])
        return EndpointTriplet(host, int(port), carrier)

    def unregister(self, name):
        self._check(self._request(f"UNREGISTER {name}")[0])

    def list(self) -> list[tuple[str, EndpointTriplet]]:
        reply, lines = self._request("LIST")
        self._check(reply)
        out = []
        for line in lines:
            name, host, port, carrier = line.split()
            out.append((name, EndpointTriplet(host, int(port), carrier)))
        return out

    def close(self):
        with self._lock:
            self._drop()
