"""Exception hierarchy.

Every error carries a short kebab-case ``code`` which is what travels over
the text protocols (``ERR <code>`` / ``err <code>``).
"""


class PrioportError(Exception):
    code = "error"

    def __init__(self, message=None):
        super().__init__(message or self.code)


# -- framing -----------------------------------------------------------------

class FrameError(PrioportError):
    code = "malformed"


class PayloadTooLarge(FrameError):
    code = "payload-too-large"


class BadMagic(FrameError):
    code = "bad-magic"


class UnknownVersion(FrameError):
    code = "unknown-version"


class UnknownType(FrameError):
    code = "unknown-type"


class Truncated(FrameError):
    """Not an error in the data, just not enough of it yet."""
    code = "truncated"


class ProtocolError(PrioportError):
    code = "protocol-error"


class ConnectionClosed(PrioportError):
    code = "connection-closed"


# -- handshake ---------------------------------------------------------------

class HandshakeError(PrioportError):
    code = "handshake-failure"


class VersionMismatch(HandshakeError):
    code = "version-mismatch"


class RoleRejected(HandshakeError):
    code = "role-rejected"


class HandshakeTimeout(HandshakeError):
    code = "timeout"


class CarrierUnsupported(HandshakeError):
    code = "carrier-unsupported"


# -- name server -------------------------------------------------------------

class NameServerError(PrioportError):
    code = "nameserver-error"


class NotFound(NameServerError):
    code = "not-found"


class NameAlreadyRegistered(NameServerError):
    code = "name-already-registered"


class MalformedName(NameServerError):
    code = "malformed-name"


class ServerUnreachable(NameServerError):
    code = "server-unreachable"


# -- ports and channels ------------------------------------------------------

class BindFailure(PrioportError):
    code = "bind-failure"


class LookupFailure(PrioportError):
    code = "lookup-failure"


class NoSuchChannel(PrioportError):
    code = "no-such-channel"


class PortClosed(PrioportError):
    code = "port-closed"


class ReadTimeout(PrioportError):
    code = "timeout"


# -- admin / qos -------------------------------------------------------------

class AdminError(PrioportError):
    code = "admin-error"


class AdminSyntaxError(AdminError):
    code = "syntax-error"

    def __init__(self, message, position):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnknownVerb(AdminError):
    code = "unknown-verb"


class UnknownProperty(AdminError):
    code = "unknown-property"


class InvalidPriorityForPolicy(AdminError):
    code = "invalid-priority-for-policy"


class OutOfRange(PrioportError):
    code = "out-of-range"


# -- emulator / bench --------------------------------------------------------

class UnknownHost(PrioportError):
    code = "unknown-host"


class TopologyError(PrioportError):
    code = "topology-error"


class EmptySampleSet(PrioportError):
    code = "empty-sample-set"


class ZeroAcks(PrioportError):
    code = "zero-acks"


class ChannelDown(PrioportError):
    code = "channel-down"
