"""Frame codec, handshake and the byte-level connection helpers.

Header layout (25 bytes, big-endian)::

    0   2  magic 0x59 0x50
    2   1  version (1)
    3   1  frame type
    4   1  flags (bit 0: ack requested)
    5   8  message id
    13  8  timestamp, sender monotonic ns
    21  4  payload length
"""

from __future__ import annotations

import enum
import socket
import struct
import threading
from dataclasses import dataclass, field

from . import errors

MAGIC = b"\x59\x50"
VERSION = 1
HEADER = struct.Struct(">2sBBBQQI")
HEADER_SIZE = HEADER.size
MAX_PAYLOAD = 0xFFFFFFFF
UDP_MAX_PAYLOAD = 60 * 1024

FLAG_ACK_REQUESTED = 0x01

CARRIERS = ("tcp", "udp", "emu")


class FrameType(enum.IntEnum):
    DATA = 0
    ACK = 1
    ADMIN_REQUEST = 2
    ADMIN_REPLY = 3
    HANDSHAKE = 4


class SessionRole(enum.Enum):
    DATA_SESSION = "DATA_SESSION"
    ADMIN_SESSION = "ADMIN_SESSION"


# frame types each role may carry once the handshake is over
ROLE_FRAME_TYPES = {
    SessionRole.DATA_SESSION: {FrameType.DATA, FrameType.ACK},
    SessionRole.ADMIN_SESSION: {FrameType.ADMIN_REQUEST, FrameType.ADMIN_REPLY},
}


@dataclass(frozen=True)
class Frame:
    frame_type: FrameType
    message_id: int = 0
    timestamp_ns: int = 0
    flags: int = 0
    payload: bytes = b""

    @property
    def ack_requested(self) -> bool:
        return bool(self.flags & FLAG_ACK_REQUESTED)

    def ack(self) -> "Frame":
        """The ACK answering this DATA frame."""
        return Frame(FrameType.ACK, self.message_id, self.timestamp_ns, 0, b"")


def encode_frame(f: Frame) -> bytes:
    payload = bytes(f.payload)
    if len(payload) > MAX_PAYLOAD:
        raise errors.PayloadTooLarge(f"payload of {len(payload)} bytes")
    header = HEADER.pack(MAGIC, VERSION, int(f.frame_type), f.flags,
                         f.message_id, f.timestamp_ns, len(payload))
    return header + payload


def decode_frame(data: bytes) -> tuple[Frame, int]:
    """Decode one frame from the start of ``data``.

    Returns ``(frame, consumed)``. Trailing bytes beyond the frame are left
    alone so stream readers can keep re-framing. Raises ``Truncated`` when
    the bytes seen so far are a valid prefix but incomplete.
    """
    n = len(data)
    # validate whatever prefix we have before asking for more bytes
    if data[:min(n, 2)] != MAGIC[:min(n, 2)]:
        raise errors.BadMagic()
    if n >= 3 and data[2] != VERSION:
        raise errors.UnknownVersion(f"version {data[2]}")
    if n >= 4 and data[3] not in _TYPE_VALUES:
        raise errors.UnknownType(f"type {data[3]}")
    if n < HEADER_SIZE:
        raise errors.Truncated()
    _, _, ftype, flags, mid, ts, length = HEADER.unpack_from(data)
    end = HEADER_SIZE + length
    if n < end:
        raise errors.Truncated()
    frame = Frame(FrameType(ftype), mid, ts, flags, bytes(data[HEADER_SIZE:end]))
    return frame, end


_TYPE_VALUES = frozenset(int(t) for t in FrameType)


def wire_size(payload_len: int) -> int:
    return HEADER_SIZE + payload_len


# -- connections ---------------------------------------------------------------

class StreamConnection:
    """Frames over a connected stream socket.

    One reader at a time; ``send_frame`` is serialized internally so an
    ACK-writing receiver and an admin reply never interleave bytes.
    """

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._buf = bytearray()
        self._send_lock = threading.Lock()
        self._closed = False

    def send_frame(self, frame: Frame) -> None:
        data = encode_frame(frame)
        with self._send_lock:
            try:
                self.sock.sendall(data)
            except OSError as exc:
                raise errors.ConnectionClosed(str(exc)) from exc

    def recv_frame(self, timeout: float | None = None) -> Frame | None:
        """Next frame, or None on timeout. Raises ConnectionClosed on EOF."""
        while True:
            if self._buf:
                try:
                    frame, used = decode_frame(self._buf)
                except errors.Truncated:
                    pass
                except errors.FrameError as exc:
                    raise errors.ProtocolError(exc.code) from exc
                else:
                    del self._buf[:used]
                    return frame
            try:
                self.sock.settimeout(timeout)
                chunk = self.sock.recv(65536)
            except socket.timeout:
                return None
            except OSError as exc:
                raise errors.ConnectionClosed(str(exc)) from exc
            if not chunk:
                raise errors.ConnectionClosed("eof")
            self._buf += chunk

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class DatagramConnection:
    """One frame per datagram on a UDP socket.

    ``peer`` may be None on the accepting side; it then latches onto the
    address of the first datagram received so ACKs can go back.
    """

    def __init__(self, sock: socket.socket, peer=None):
        self.sock = sock
        self.peer = peer

    def send_frame(self, frame: Frame) -> None:
        data = encode_frame(frame)
        if len(frame.payload) > UDP_MAX_PAYLOAD:
            raise errors.PayloadTooLarge(f"{len(frame.payload)} bytes over udp")
        if self.peer is None:
            raise errors.ConnectionClosed("no peer address yet")
        try:
            self.sock.sendto(data, self.peer)
        except OSError as exc:
            raise errors.ConnectionClosed(str(exc)) from exc

    def recv_frame(self, timeout: float | None = None) -> Frame | None:
        try:
            self.sock.settimeout(timeout)
            data, addr = self.sock.recvfrom(65536)
        except socket.timeout:
            return None
        except OSError as exc:
            raise errors.ConnectionClosed(str(exc)) from exc
        try:
            frame, used = decode_frame(data)
        except errors.FrameError:
            return None  # garbage datagrams are dropped, not fatal
        if used != len(data):
            return None
        if self.peer is None:
            self.peer = addr
        return frame

    def close(self) -> None:
        self.sock.close()


# -- handshake -----------------------------------------------------------------

@dataclass(frozen=True)
class HandshakeInfo:
    source_port_name: str
    session_role: SessionRole = SessionRole.DATA_SESSION
    requested_carrier: str = "tcp"
    protocol_version: int = VERSION
    extras: dict = field(default_factory=dict, compare=False)

    def to_payload(self) -> bytes:
        lines = [
            f"version={self.protocol_version}",
            f"role={self.session_role.value}",
            f"port={self.source_port_name}",
            f"carrier={self.requested_carrier}",
        ]
        lines += [f"{k}={v}" for k, v in self.extras.items()]
        return ("\n".join(lines) + "\n").encode()

    @classmethod
    def from_payload(cls, payload: bytes) -> "HandshakeInfo":
        kv = _parse_kv(payload)
        try:
            info = cls(
                source_port_name=kv.pop("port"),
                session_role=SessionRole(kv.pop("role")),
                requested_carrier=kv.pop("carrier"),
                protocol_version=int(kv.pop("version")),
                extras=kv,
            )
        except (KeyError, ValueError) as exc:
            raise errors.ProtocolError(f"bad handshake: {exc}") from exc
        return info


@dataclass(frozen=True)
class SessionDescriptor:
    role: SessionRole
    carrier: str
    peer_name: str
    extras: dict = field(default_factory=dict)


def _parse_kv(payload: bytes) -> dict:
    kv = {}
    for line in payload.decode("utf-8", "replace").splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            kv[k.strip()] = v.strip()
    return kv


_REJECTIONS = {cls.code: cls for cls in (
    errors.VersionMismatch, errors.RoleRejected, errors.CarrierUnsupported,
    errors.HandshakeError, errors.NameAlreadyRegistered,
)}


def perform_handshake(conn, info: HandshakeInfo, side: str, *, timeout=5.0,
                      accept=None, roles=tuple(SessionRole)) -> SessionDescriptor:
    """Exchange one HANDSHAKE frame in each direction.

    ``side`` is ``"initiator"`` or ``"acceptor"``. On the acceptor, ``info``
    describes the local port; ``accept(request_info)`` may return extra
    key/values for the reply or raise a HandshakeError to refuse.
    The caller closes the connection when this raises.
    """
    if side == "initiator":
        conn.send_frame(Frame(FrameType.HANDSHAKE, payload=info.to_payload()))
        reply = conn.recv_frame(timeout)
        if reply is None:
            raise errors.HandshakeTimeout()
        if reply.frame_type != FrameType.HANDSHAKE:
            raise errors.ProtocolError("expected HANDSHAKE reply")
        kv = _parse_kv(reply.payload)
        status = kv.pop("status", "")
        if status != "ok":
            reason = kv.get("reason", "handshake-failure")
            raise _REJECTIONS.get(reason, errors.HandshakeError)(reason)
        peer = kv.pop("port", "")
        kv.pop("version", None)
        return SessionDescriptor(info.session_role, info.requested_carrier, peer, kv)

    if side != "acceptor":
        raise ValueError(f"side must be initiator or acceptor, not {side!r}")
    frame = conn.recv_frame(timeout)
    if frame is None:
        raise errors.HandshakeTimeout()
    if frame.frame_type != FrameType.HANDSHAKE:
        raise errors.ProtocolError("expected HANDSHAKE")
    request = HandshakeInfo.from_payload(frame.payload)
    try:
        if request.protocol_version != info.protocol_version:
            raise errors.VersionMismatch(
                f"peer speaks {request.protocol_version}, we speak {info.protocol_version}")
        if request.session_role not in roles:
            raise errors.RoleRejected(request.session_role.value)
        if request.session_role is SessionRole.DATA_SESSION and \
                request.requested_carrier not in CARRIERS:
            raise errors.CarrierUnsupported(request.requested_carrier)
        extras = dict(accept(request) or {}) if accept else {}
    except errors.HandshakeError as exc:
        payload = f"status=rejected\nreason={exc.code}\n".encode()
        conn.send_frame(Frame(FrameType.HANDSHAKE, payload=payload))
        raise
    lines = ["status=ok", f"version={info.protocol_version}",
             f"port={info.source_port_name}"]
    lines += [f"{k}={v}" for k, v in extras.items()]
    conn.send_frame(Frame(FrameType.HANDSHAKE, payload=("\n".join(lines) + "\n").encode()))
    return SessionDescriptor(request.session_role, request.requested_carrier,
                             request.source_port_name, extras)
