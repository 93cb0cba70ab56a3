"""Exception types raised across the stack."""


class DpwsError(Exception):
    """Base class for every error this package raises deliberately."""


# --- XML / SOAP codec ---

class MalformedXml(DpwsError):
    """Input is not well-formed, or uses a forbidden construct (DTD, PI, entity)."""


class NotSoap(DpwsError):
    """Document parsed, but the root is not a SOAP 1.2 Envelope."""


class MissingAction(DpwsError):
    """Envelope carries no WS-Addressing Action header."""


class Oversize(DpwsError):
    """Input exceeds the configured size cap."""


class InvariantViolation(DpwsError):
    """A value violates its own type invariants (e.g. fault flag without fault body)."""


# --- transport ---

class BindFailure(DpwsError):
    """Socket could not be bound to the requested address/port."""


class JoinFailure(DpwsError):
    """Multicast group membership could not be established on any interface."""


class DiscoveryStartFailure(DpwsError):
    """The discovery responder could not come up (socket or group join)."""


class SocketError(DpwsError):
    """Datagram send/receive failed at the OS level."""


class ConnectFailure(DpwsError):
    """TCP connection to the target could not be established."""


class Timeout(DpwsError):
    """The peer did not answer within the allotted time."""


class ProtocolError(DpwsError):
    """The peer answered with something that is not valid HTTP."""


# --- device runtime ---

class InvalidConfig(DpwsError):
    """Device configuration rejected; the message names the offending field."""


class DuplicateServiceId(DpwsError):
    """A service with this identifier is already registered."""


class InvalidService(DpwsError):
    """Service definition is inconsistent (dangling type name, duplicate operation...)."""


class AlreadyStarted(DpwsError):
    """start() called on a device that is already running."""


# --- client ---

class FaultReceived(DpwsError):
    """The peer answered with a SOAP fault."""

    def __init__(self, code: str, reason: str, subcode: str | None = None):
        super().__init__(f"{code}: {reason}")
        self.code = code
        self.reason = reason
        self.subcode = subcode


class MalformedMetadata(DpwsError):
    """Metadata response is missing a required section or is inconsistent."""


class TypeMismatch(DpwsError):
    """A value does not conform to the declared primitive type."""


class UnknownOperation(DpwsError):
    """The named operation does not exist on the target service."""


class InvalidTimeout(DpwsError):
    """Timeout argument must be positive."""


class NoTransportAddress(DpwsError):
    """No transport address is known for the device and Resolve found none."""


class SinkBindFailure(DpwsError):
    """The client could not start its notification sink listener."""


class UnknownSubscription(DpwsError):
    """Subscription id does not identify an active subscription."""


class UnknownEvent(DpwsError):
    """Event name is not declared by the service."""
