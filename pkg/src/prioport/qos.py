"""Per-channel priority: packet marking, thread scheduling, admin commands.

A channel's priority has two independent halves:

* a packet priority class, carried as a DSCP codepoint in the top six bits
  of the TOS byte, which the host queue discipline and DiffServ switches
  use to pick a band;
* the scheduling policy/priority of the channel's dedicated OS thread.

Both are set at runtime with administrative commands such as::

    prop set /subscriber1 (sched ((policy SCHED_FIFO) (priority 30)))
    prop set /subscriber1 (qos ((priority HIGH)))
"""

from __future__ import annotations

import enum
import os
import re
import socket
from dataclasses import dataclass, replace

from . import errors


class PriorityClass(enum.Enum):
    LOW = "LOW"
    NORMAL = "NORMAL"
    HIGH = "HIGH"
    CRITICAL = "CRITICAL"


# Codepoints from the DiffServ registry: AFxy = 8x + 2y, VOICE-ADMIT = 0b101100.
DSCP_DEFAULT = 0
DSCP_AF11 = 0b001010
DSCP_AF42 = 0b100100
DSCP_VA = 0b101100
DSCP_EF = 0b101110

DSCP_NAMES = {"Default": DSCP_DEFAULT, "EF": DSCP_EF, "VA": DSCP_VA}
DSCP_NAMES.update({f"CS{x}": 8 * x for x in range(1, 8)})
DSCP_NAMES.update({f"AF{x}{y}": 8 * x + 2 * y for x in range(1, 5) for y in range(1, 4)})
_DSCP_BY_VALUE = {v: k for k, v in DSCP_NAMES.items()}

_CLASS_DSCP = {
    PriorityClass.LOW: DSCP_AF11,
    PriorityClass.NORMAL: DSCP_DEFAULT,
    PriorityClass.HIGH: DSCP_AF42,
    PriorityClass.CRITICAL: DSCP_VA,
}
_DSCP_CLASS = {v: k for k, v in _CLASS_DSCP.items()}

# TOS byte -> band of the three-band discipline; anything else is band 1
_TOS_BAND = {0x90: 0, 0xB0: 0, 0x00: 1, 0x28: 2}
DEFAULT_BAND = 1
NUM_BANDS = 3


def class_to_dscp(c: PriorityClass) -> int:
    return _CLASS_DSCP[PriorityClass(c)]


def dscp_to_class(dscp: int) -> PriorityClass | None:
    return _DSCP_CLASS.get(dscp)


def dscp_to_tos(d: int) -> int:
    if not 0 <= d <= 63:
        raise errors.OutOfRange(f"DSCP {d} not in 0..63")
    return d << 2


def tos_to_band(tos: int) -> int:
    return _TOS_BAND.get(tos & 0xFF, DEFAULT_BAND)


def class_to_tos(c: PriorityClass) -> int:
    return dscp_to_tos(class_to_dscp(c))


def dscp_name(d: int):
    return _DSCP_BY_VALUE.get(d, d)


def parse_dscp(token) -> int:
    if isinstance(token, int):
        value = token
    else:
        lookup = {k.upper(): v for k, v in DSCP_NAMES.items()}
        if str(token).upper() not in lookup:
            raise errors.UnknownProperty(f"unknown DSCP {token}")
        value = lookup[str(token).upper()]
    if not 0 <= value <= 63:
        raise errors.OutOfRange(f"DSCP {value} not in 0..63")
    return value


# -- thread scheduling ----------------------------------------------------------

class SchedPolicy(enum.Enum):
    OTHER = "SCHED_OTHER"
    FIFO = "SCHED_FIFO"
    RR = "SCHED_RR"

    @classmethod
    def parse(cls, token: str) -> "SchedPolicy":
        t = str(token).upper()
        for p in cls:
            if t in (p.value, p.name):
                return p
        raise errors.UnknownProperty(f"unknown policy {token}")

    @property
    def realtime(self) -> bool:
        return self is not SchedPolicy.OTHER


@dataclass(frozen=True)
class SchedulingProperties:
    policy: SchedPolicy = SchedPolicy.OTHER
    priority: int = 0
    applied: bool = True
    degraded_reason: str | None = None

    def validate(self):
        if self.policy.realtime:
            if not 1 <= self.priority <= 99:
                raise errors.InvalidPriorityForPolicy(
                    f"{self.policy.value} needs priority 1..99, got {self.priority}")
        elif self.priority != 0:
            raise errors.InvalidPriorityForPolicy(
                f"{self.policy.value} needs priority 0, got {self.priority}")
        return self

    @property
    def effective_priority(self) -> int:
        """Ordering weight: any real-time thread outranks any time-sharing one."""
        return self.priority if self.policy.realtime else 0


_OS_POLICY = {
    SchedPolicy.OTHER: getattr(os, "SCHED_OTHER", None),
    SchedPolicy.FIFO: getattr(os, "SCHED_FIFO", None),
    SchedPolicy.RR: getattr(os, "SCHED_RR", None),
}


def apply_thread_sched(native_tid: int, props: SchedulingProperties) -> str | None:
    """Set the OS scheduling of one thread. Returns a degraded reason or None."""
    policy = _OS_POLICY.get(props.policy)
    if policy is None or not hasattr(os, "sched_setscheduler"):
        return "unsupported"
    try:
        os.sched_setscheduler(native_tid, policy, os.sched_param(props.priority))
    except PermissionError:
        return "permission"
    except OSError as exc:
        return os.strerror(exc.errno) if exc.errno else "unsupported"
    return None


def apply_socket_tos(sock: socket.socket, tos: int) -> str | None:
    try:
        sock.setsockopt(socket.IPPROTO_IP, socket.IP_TOS, tos)
    except PermissionError:
        return "permission"
    except (OSError, AttributeError):
        return "unsupported"
    return None


# -- setters -------------------------------------------------------------------

def set_channel_packet_priority(port, peer: str, c=None, *, dscp: int | None = None):
    """Mark all subsequent outbound packets of one channel.

    Either a priority class or a raw DSCP value. Returns the channel state.
    """
    channel = port.find_channel(peer)
    if dscp is None:
        c = PriorityClass(c)
        dscp = class_to_dscp(c)
    else:
        c = dscp_to_class(dscp)
    tos = dscp_to_tos(dscp)
    with channel.lock:
        reason = channel.apply_tos(tos)
        st = channel.state
        st.packet_priority, st.dscp, st.tos = c, dscp, tos
        st.qos_degraded = reason
    return channel.snapshot()


def set_channel_thread_sched(port, peer: str, s: SchedulingProperties):
    channel = port.find_channel(peer)
    s = replace(s, applied=True, degraded_reason=None).validate()
    with channel.lock:
        reason = channel.apply_sched(s)
        channel.state.sched = replace(s, applied=reason is None, degraded_reason=reason)
    return channel.snapshot()


# -- admin s-expressions ---------------------------------------------------------

class Quoted(str):
    """A string atom that was (or must be) written in double quotes."""


_TOKEN = re.compile(r'\s*(?:(\()|(\))|"((?:[^"\\]|\\.)*)"|([^\s()"]+))')
_INT = re.compile(r"-?\d+\Z")


def parse_sexpr(text: str) -> list:
    """Whitespace-insensitive s-expressions: lists, symbols, integers, strings."""
    stack = [[]]
    pos = 0
    opened = []
    while True:
        m = _TOKEN.match(text, pos)
        if not m:
            rest = text[pos:]
            if rest.strip():
                raise errors.AdminSyntaxError("unexpected character", pos + len(rest) - len(rest.lstrip()))
            break
        start = m.start(m.lastindex)
        pos = m.end()
        if m.group(1):
            stack.append([])
            opened.append(start)
        elif m.group(2):
            if len(stack) == 1:
                raise errors.AdminSyntaxError("unbalanced ')'", start)
            item = stack.pop()
            opened.pop()
            stack[-1].append(item)
        elif m.group(3) is not None:
            stack[-1].append(Quoted(re.sub(r"\\(.)", r"\1", m.group(3))))
        else:
            atom = m.group(4)
            stack[-1].append(int(atom) if _INT.match(atom) else atom)
    if len(stack) != 1:
        raise errors.AdminSyntaxError("unclosed '('", opened[-1])
    return stack[0]


def render_sexpr(item) -> str:
    if isinstance(item, (list, tuple)):
        return "(" + " ".join(render_sexpr(x) for x in item) + ")"
    if isinstance(item, Quoted) or (isinstance(item, str) and (not item or re.search(r'[\s()"]', item))):
        return '"' + item.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(item, enum.Enum):
        return str(item.value)
    return str(item)


VERBS = ("prop_set", "prop_get", "connect", "disconnect")
PROPERTIES = ("sched", "qos", "qlen")


@dataclass
class AdminRequest:
    verb: str
    target_peer: str
    properties: dict


def _pairs(value, prop) -> dict:
    if not isinstance(value, list) or not all(
            isinstance(p, list) and len(p) == 2 and isinstance(p[0], str) for p in value):
        raise errors.UnknownProperty(f"{prop} expects ((key value) ...)")
    return {k.lower(): v for k, v in value}


def _normalize_property(name, value):
    if name == "sched":
        kv = _pairs(value, name)
        if set(kv) - {"policy", "priority"}:
            raise errors.UnknownProperty(f"sched has no {sorted(set(kv) - {'policy', 'priority'})}")
        priority = kv.get("priority", 0)
        if not isinstance(priority, int):
            raise errors.UnknownProperty(f"sched priority must be an integer, got {priority}")
        return {"policy": SchedPolicy.parse(kv.get("policy", "SCHED_OTHER")), "priority": priority}
    if name == "qos":
        kv = _pairs(value, name)
        if len(kv) != 1 or set(kv) - {"priority", "dscp", "tos"}:
            raise errors.UnknownProperty("qos takes exactly one of priority, dscp, tos")
        (key, v), = kv.items()
        if key == "priority":
            try:
                return {"priority": PriorityClass(str(v).upper())}
            except ValueError:
                raise errors.UnknownProperty(f"unknown priority class {v}") from None
        if key == "dscp":
            return {"dscp": parse_dscp(v)}
        if not isinstance(v, int) or not 0 <= v <= 255:
            raise errors.UnknownProperty(f"tos must be 0..255, got {v}")
        return {"tos": v}
    if name == "qlen":
        if isinstance(value, list) and len(value) == 1:
            value = value[0]
        if not isinstance(value, int) or value < 1:
            raise errors.UnknownProperty(f"qlen must be a positive integer, got {value}")
        return value
    raise errors.UnknownProperty(f"unknown property {name}")


def _peer(tokens, index, text):
    if index >= len(tokens) or not isinstance(tokens[index], str) \
            or not tokens[index].startswith("/"):
        raise errors.AdminSyntaxError("expected a port name", len(text))
    return tokens[index]


def parse_admin_command(text: str) -> AdminRequest:
    tokens = parse_sexpr(text)
    if not tokens:
        raise errors.AdminSyntaxError("empty command", 0)
    head = str(tokens[0]).lower()
    if head == "prop":
        sub = str(tokens[1]).lower() if len(tokens) > 1 else ""
        if sub == "get":
            peer = _peer(tokens, 2, text)
            if len(tokens) > 3:
                raise errors.AdminSyntaxError("prop get takes only a port name", len(text))
            return AdminRequest("prop_get", peer, {})
        if sub == "set":
            peer = _peer(tokens, 2, text)
            props = {}
            for item in tokens[3:]:
                if not isinstance(item, list) or len(item) != 2 or not isinstance(item[0], str):
                    raise errors.UnknownProperty(f"expected (name value), got {render_sexpr(item)}")
                name = item[0].lower()
                props[name] = _normalize_property(name, item[1])
            if not props:
                raise errors.AdminSyntaxError("prop set needs a property", len(text))
            return AdminRequest("prop_set", peer, props)
        raise errors.UnknownVerb(f"prop {sub}")
    if head == "connect":
        peer = _peer(tokens, 1, text)
        carrier = str(tokens[2]) if len(tokens) > 2 else "tcp"
        return AdminRequest("connect", peer, {"carrier": carrier})
    if head == "disconnect":
        return AdminRequest("disconnect", _peer(tokens, 1, text), {})
    raise errors.UnknownVerb(head)


def _render_value(name, value):
    if name == "qlen":
        return value
    return [[k, v] for k, v in value.items()]


def render_admin_request(r: AdminRequest) -> str:
    if r.verb == "prop_get":
        return f"prop get {r.target_peer}"
    if r.verb == "prop_set":
        props = " ".join(render_sexpr([n, _render_value(n, v)]) for n, v in r.properties.items())
        return f"prop set {r.target_peer} {props}"
    if r.verb == "connect":
        return f"connect {r.target_peer} {r.properties.get('carrier', 'tcp')}"
    if r.verb == "disconnect":
        return f"disconnect {r.target_peer}"
    raise errors.UnknownVerb(r.verb)


# -- request handling ------------------------------------------------------------

def render_channel_state(st) -> str:
    sched = [["policy", st.sched.policy], ["priority", st.sched.priority],
             ["applied", int(st.sched.applied)]]
    if st.sched.degraded_reason:
        sched.append(["degraded", Quoted(st.sched.degraded_reason)])
    qos = [["priority", st.packet_priority.value if st.packet_priority else "CUSTOM"],
           ["dscp", dscp_name(st.dscp)]]
    c = st.counters
    parts = [
        ["sched", sched],
        ["qos", qos],
        ["tos", st.tos],
        ["qlen", st.capacity],
        ["counters", [["enqueued", c.enqueued], ["sent", c.sent], ["received", c.received],
                      ["dropped", c.dropped], ["acks", c.acks], ["errors", c.errors]]],
        ["queued", st.queued],
        ["status", st.status],
        ["direction", st.direction],
        ["carrier", st.carrier],
    ]
    if st.qos_degraded:
        parts.insert(2, ["qos_degraded", Quoted(st.qos_degraded)])
    return " ".join(render_sexpr(p) for p in parts)


def handle_admin_request(port, req: AdminRequest) -> str:
    """Execute one admin request against a port; always returns reply text."""
    try:
        if req.verb == "prop_get":
            return "ok " + render_channel_state(port.channel_info(req.target_peer))
        if req.verb == "connect":
            port.connect(req.target_peer, req.properties.get("carrier", "tcp"))
            return "ok"
        if req.verb == "disconnect":
            port.disconnect(req.target_peer)
            return "ok"
        if req.verb != "prop_set":
            raise errors.UnknownVerb(req.verb)
        port.find_channel(req.target_peer)
        degraded = []
        for name, value in req.properties.items():
            if name == "sched":
                st = set_channel_thread_sched(
                    port, req.target_peer,
                    SchedulingProperties(value["policy"], value["priority"]))
                if st.sched.degraded_reason:
                    degraded.append(st.sched.degraded_reason)
            elif name == "qos":
                if "priority" in value:
                    st = set_channel_packet_priority(port, req.target_peer, value["priority"])
                else:
                    dscp = value["dscp"] if "dscp" in value else value["tos"] >> 2
                    st = set_channel_packet_priority(port, req.target_peer, dscp=dscp)
                if st.qos_degraded:
                    degraded.append(st.qos_degraded)
            elif name == "qlen":
                port.find_channel(req.target_peer).set_capacity(value)
            else:
                raise errors.UnknownProperty(name)
        if degraded:
            return "ok " + render_sexpr(["degraded", Quoted(degraded[0])])
        return "ok"
    except errors.PrioportError as exc:
        return f"err {exc.code}"


def execute_admin_text(port, text: str) -> str:
    try:
        req = parse_admin_command(text)
    except errors.PrioportError as exc:
        detail = f" {exc}" if isinstance(exc, errors.AdminSyntaxError) else ""
        return f"err {exc.code}{detail}"
    return handle_admin_request(port, req)
