"""The device runtime.

A Device is configured declaratively: identity and model attributes in
DeviceConfig, one or more ServiceDefinitions with typed operations and
event sources. start() binds the HTTP listener, joins the discovery
group and multicasts Hello; stop() multicasts Bye first, ends every
active subscription, drains in-flight HTTP requests and closes.

Request dispatch routes by (path, action): /<uuid> answers metadata
Get, /<uuid>/<service_id> answers the service's operations and its
subscription management. Handlers follow the completion-callback
contract handler(input, cb) with cb(error, value); the runtime
enforces exactly-once completion and a per-invocation timeout.
"""
from __future__ import annotations

import logging
import re
import threading
import time
import uuid as uuid_module
from dataclasses import dataclass, field

from .discovery import DeviceAdvertisement, DiscoveryResponder
from .errors import (
    AlreadyStarted,
    DiscoveryStartFailure,
    DpwsError,
    DuplicateServiceId,
    InvalidConfig,
    InvalidService,
    InvariantViolation,
    TypeMismatch,
    UnknownEvent,
)
from .eventing import SubscriptionManager
from .metadata import (
    DeviceMetadata,
    EventDescription,
    HostedService,
    OperationDescription,
    Relationship,
    ServiceDescription,
    ThisDevice,
    ThisModel,
    build_metadata_response,
)
from .namespaces import VersionProfile, profile_for
from .primitives import PRIMITIVES, decode_value, encode_value
from .soap import (
    HTTP_MAX_ENVELOPE,
    EndpointReference,
    SoapEnvelope,
    envelope,
    fault_envelope,
    parse_envelope,
    serialize_envelope,
)
from .transport import (
    SOAP_CONTENT_TYPE,
    HttpServer,
    MulticastEndpoint,
    primary_ipv4,
)
from .xmlcodec import QName, XmlElement, element

log = logging.getLogger(__name__)

DEFAULT_INVOCATION_TIMEOUT = 30.0
SWEEP_INTERVAL = 0.5
DEFAULT_SERVICE_NS = "urn:x-dpws:service"

_SERVICE_ID = re.compile(r"^[A-Za-z0-9_.~-]+$")
_TOKEN = re.compile(r"^[A-Za-z_][A-Za-z0-9_.-]*$")
_NUMERIC = re.compile(r"^[0-9]+$")


# --- definitions ---

@dataclass(frozen=True)
class OperationDefinition:
    """One operation: optional input and output name a type from the
    owning service's type map; handler(input, cb) completes by calling
    cb(error, value) exactly once, synchronously or later."""

    name: str
    handler: object
    input: str | None = None
    output: str | None = None


@dataclass(frozen=True)
class EventSourceDefinition:
    name: str
    payload: str


@dataclass(frozen=True)
class ServiceDefinition:
    """A service: named primitive types plus the operations and event
    sources that use them. serialized=True runs this service's
    handlers one at a time; the default allows concurrent invocation
    (handlers must then be thread-safe)."""

    service_id: str
    types: dict[str, str] = field(default_factory=dict)
    operations: tuple[OperationDefinition, ...] = ()
    events: tuple[EventSourceDefinition, ...] = ()
    port_type: QName | None = None
    serialized: bool = False


def _validate_service(svc: ServiceDefinition):
    if not _SERVICE_ID.match(svc.service_id):
        raise InvalidService(
            f"service id {svc.service_id!r} is not a path-safe token")
    for name, primitive in svc.types.items():
        if not _TOKEN.match(name):
            raise InvalidService(f"type name {name!r} is not a token")
        if primitive not in PRIMITIVES:
            raise InvalidService(
                f"type {name!r} uses unknown primitive {primitive!r}")
    seen: set[str] = set()
    for op in svc.operations:
        if not _TOKEN.match(op.name):
            raise InvalidService(f"operation name {op.name!r} is not a token")
        if op.name in seen:
            raise InvalidService(f"duplicate operation name {op.name!r}")
        seen.add(op.name)
        for direction, type_name in (("input", op.input), ("output", op.output)):
            if type_name is not None and type_name not in svc.types:
                raise InvalidService(
                    f"operation {op.name!r} {direction} references "
                    f"unknown type {type_name!r}")
        if not callable(op.handler):
            raise InvalidService(f"operation {op.name!r} handler is not callable")
    for event in svc.events:
        if not _TOKEN.match(event.name):
            raise InvalidService(f"event name {event.name!r} is not a token")
        if event.name in seen:
            raise InvalidService(
                f"event name {event.name!r} collides within the service")
        seen.add(event.name)
        if event.payload not in svc.types:
            raise InvalidService(
                f"event {event.name!r} payload references unknown type "
                f"{event.payload!r}")


def coerce_metadata_version(value) -> int:
    """Accept an int or a decimal string (the configuration idiom of
    stamping the version from the current time serializes as a string)
    and return the unsigned integer the protocol requires."""
    if isinstance(value, bool):
        raise InvalidConfig("metadata_version must be an unsigned integer")
    if isinstance(value, int):
        version = value
    elif isinstance(value, str) and _NUMERIC.match(value.strip()):
        version = int(value.strip())
    else:
        raise InvalidConfig(
            f"metadata_version {value!r} is not an unsigned integer")
    if version < 0:
        raise InvalidConfig("metadata_version must be non-negative")
    return version


@dataclass(frozen=True)
class DeviceConfig:
    """Identity and model attributes of one device."""

    address: str
    this_model: ThisModel
    this_device: ThisDevice
    types: tuple[QName, ...] = ()
    scopes: tuple[str, ...] = ()
    metadata_version: int = 1
    http_port: int = 8080
    version_profile: str = "1.1"

    def __post_init__(self):
        bare = self.address
        for prefix in ("urn:uuid:", "uuid:"):
            if bare.lower().startswith(prefix):
                bare = bare[len(prefix):]
                break
        try:
            parsed = uuid_module.UUID(bare)
        except ValueError:
            raise InvalidConfig(
                f"address {self.address!r} is not a valid UUID") from None
        object.__setattr__(self, "address", f"urn:uuid:{parsed}")
        if not isinstance(self.http_port, int) or isinstance(self.http_port, bool) \
                or not 1 <= self.http_port <= 65535:
            raise InvalidConfig(
                f"http_port {self.http_port!r} is outside [1, 65535]")
        object.__setattr__(self, "metadata_version",
                           coerce_metadata_version(self.metadata_version))
        for qn in self.types:
            if not isinstance(qn, QName) or not qn.namespace:
                raise InvalidConfig(f"device type {qn!r} must be a namespace-"
                                    "qualified QName")
        for scope in self.scopes:
            if not re.match(r"^[A-Za-z][A-Za-z0-9+.-]*:", scope):
                raise InvalidConfig(f"scope {scope!r} is not an absolute IRI")
        try:
            profile_for(self.version_profile)
        except ValueError:
            raise InvalidConfig(
                f"unknown version profile {self.version_profile!r}") from None

    @property
    def uuid(self) -> str:
        return self.address[len("urn:uuid:"):]

    @property
    def profile(self) -> VersionProfile:
        return profile_for(self.version_profile)


# --- invocation machinery ---

class _Completion:
    """The cb handed to a handler. First call wins; a call after the
    dispatcher gave up is discarded with a log; a call after a
    completed invocation is a handler bug and raises."""

    def __init__(self, where: str):
        self.where = where
        self.error = None
        self.value = None
        self._event = threading.Event()
        self._lock = threading.Lock()
        self._state = "pending"

    def __call__(self, error, value=None):
        with self._lock:
            if self._state == "completed":
                raise InvariantViolation(
                    f"completion for {self.where} called twice")
            if self._state == "abandoned":
                self._state = "completed"
                log.warning("late completion for %s discarded", self.where)
                return
            self._state = "completed"
            self.error = error
            self.value = value
        self._event.set()

    def wait(self, timeout: float) -> bool:
        if self._event.wait(timeout):
            return True
        with self._lock:
            if self._state == "pending":
                self._state = "abandoned"
                return False
        return True

    @property
    def completed(self) -> bool:
        return self._event.is_set()


class _ServiceRuntime:
    def __init__(self, definition: ServiceDefinition, description: ServiceDescription,
                 manager: SubscriptionManager):
        self.definition = definition
        self.description = description
        self.manager = manager
        self.lock = threading.Lock() if definition.serialized else None
        self.operations_by_action = {
            description.action_for(op.name): op for op in definition.operations}


class Device:
    """One DPWS device: registry, HTTP dispatch, discovery lifecycle."""

    def __init__(
        self,
        config: DeviceConfig,
        endpoint: MulticastEndpoint | None = None,
        invocation_timeout: float = DEFAULT_INVOCATION_TIMEOUT,
        clock=time.monotonic,
        http_host: str = "0.0.0.0",
    ):
        self.config = config
        self.profile = config.profile
        self.invocation_timeout = invocation_timeout
        self.clock = clock
        self._endpoint = endpoint
        self._http_host = http_host
        self._lifecycle = threading.Lock()
        self._lock = threading.Lock()
        self._services: dict[str, _ServiceRuntime] = {}
        self._metadata_version = config.metadata_version
        self._started = False
        self._http: HttpServer | None = None
        self._responder: DiscoveryResponder | None = None
        self._xaddrs: tuple[str, ...] = ()
        self._base_url = ""
        self._sweeper: threading.Thread | None = None
        self._closing = threading.Event()

    # -- registry --

    def add_service(self, definition: ServiceDefinition) -> ServiceDescription:
        _validate_service(definition)
        port_type = definition.port_type or QName(
            DEFAULT_SERVICE_NS, definition.service_id)
        description = ServiceDescription(
            service_id=definition.service_id,
            port_type=port_type,
            types=tuple(sorted(definition.types.items())),
            operations=tuple(
                OperationDescription(op.name, input=op.input, output=op.output)
                for op in definition.operations),
            events=tuple(EventDescription(ev.name, ev.payload)
                         for ev in definition.events),
        )
        manager = SubscriptionManager(
            manager_address="",
            valid_actions=tuple(description.action_for(ev.name)
                                for ev in definition.events),
            clock=self.clock,
            profile=self.profile,
        )
        runtime = _ServiceRuntime(definition, description, manager)
        with self._lock:
            if definition.service_id in self._services:
                raise DuplicateServiceId(
                    f"service id {definition.service_id!r} already registered")
            self._services[definition.service_id] = runtime
            started = self._started
            if started:
                self._metadata_version += 1
                manager.manager_address = self._service_url(definition.service_id)
        if started:
            self._announce()
        return description

    @property
    def services(self) -> tuple[str, ...]:
        with self._lock:
            return tuple(self._services)

    @property
    def metadata_version(self) -> int:
        with self._lock:
            return self._metadata_version

    @property
    def xaddrs(self) -> tuple[str, ...]:
        return self._xaddrs

    @property
    def started(self) -> bool:
        return self._started

    # -- lifecycle --

    def start(self):
        with self._lifecycle:
            return self._start_locked()

    def _start_locked(self):
        if self._started:
            raise AlreadyStarted("device already started")
        http = HttpServer(self.config.http_port, self._handle_http,
                          host=self._http_host)
        http.start()
        responder = DiscoveryResponder(endpoint=self._endpoint,
                                       profile=self.profile)
        try:
            responder.start()
        except DpwsError as exc:
            http.stop(drain=0.0)
            raise DiscoveryStartFailure(str(exc)) from exc
        primary = primary_ipv4()
        port = http.port
        hosts = [primary] if primary == "127.0.0.1" else [primary, "127.0.0.1"]
        xaddrs = tuple(f"http://{host}:{port}/{self.config.uuid}"
                       for host in hosts)
        with self._lock:
            self._http = http
            self._responder = responder
            self._xaddrs = xaddrs
            self._base_url = f"http://{primary}:{port}"
            self._started = True
            for runtime in self._services.values():
                runtime.manager.manager_address = self._service_url(
                    runtime.definition.service_id)
        self._closing.clear()
        self._sweeper = threading.Thread(target=self._sweep, daemon=True)
        self._sweeper.start()
        self._announce()
        return self

    def stop(self):
        with self._lifecycle:
            self._stop_locked()

    def _stop_locked(self):
        with self._lock:
            if not self._started:
                return
            self._started = False
            responder = self._responder
            http = self._http
            managers = [rt.manager for rt in self._services.values()]
        if responder is not None:
            responder.announce_bye(EndpointReference(self.config.address))
        for manager in managers:
            try:
                manager.end_all()
            except Exception:
                log.exception("ending subscriptions failed")
        self._closing.set()
        if self._sweeper is not None:
            self._sweeper.join(timeout=2.0)
            self._sweeper = None
        if http is not None:
            http.stop(drain=2.0)
        if responder is not None:
            responder.stop()
        with self._lock:
            self._http = None
            self._responder = None

    def _sweep(self):
        while not self._closing.wait(SWEEP_INTERVAL):
            with self._lock:
                managers = [rt.manager for rt in self._services.values()]
            for manager in managers:
                manager.expire_subscriptions()

    def _service_url(self, service_id: str) -> str:
        return f"{self._base_url}/{self.config.uuid}/{service_id}"

    def _advertisement(self) -> DeviceAdvertisement:
        with self._lock:
            version = self._metadata_version
        return DeviceAdvertisement(
            epr=EndpointReference(self.config.address),
            types=(self.profile.device_type,) + tuple(self.config.types),
            scopes=tuple(self.config.scopes),
            xaddrs=self._xaddrs,
            metadata_version=version,
        )

    def _announce(self):
        responder = self._responder
        if responder is not None:
            responder.announce_hello(self._advertisement())

    # -- metadata --

    def _metadata(self) -> DeviceMetadata:
        with self._lock:
            version = self._metadata_version
            hosted = tuple(
                HostedService(
                    epr=EndpointReference(
                        self._service_url(rt.definition.service_id)),
                    types=(rt.description.port_type,),
                    service_id=rt.definition.service_id,
                    description=rt.description,
                )
                for rt in self._services.values())
        return DeviceMetadata(
            this_model=self.config.this_model,
            this_device=self.config.this_device,
            relationship=Relationship(
                host=EndpointReference(self.config.address),
                host_types=(self.profile.device_type,) + tuple(self.config.types),
                hosted=hosted,
            ),
            metadata_version=version,
        )

    # -- notification --

    def emit(self, service_id: str, event_name: str, value) -> list:
        """Publish one event to every admitted subscriber; returns the
        per-subscription delivery summaries."""
        with self._lock:
            runtime = self._services.get(service_id)
        if runtime is None:
            raise UnknownEvent(f"unknown service {service_id!r}")
        event = runtime.description.event(event_name)
        if event is None:
            raise UnknownEvent(
                f"service {service_id!r} has no event {event_name!r}")
        primitive = runtime.description.primitive_of(event.payload)
        text = encode_value(primitive, value)
        ns = runtime.description.port_type.namespace
        body = element(QName(ns, event.name),
                       element(QName(ns, event.payload), text=text))
        action = runtime.description.action_for(event.name)
        return runtime.manager.emit(action, body)

    # -- dispatch --

    def dispatch(self, request: SoapEnvelope, path: str) -> SoapEnvelope:
        """Route one parsed request to the metadata exchange, the
        subscription manager or an operation; always returns exactly
        one response envelope (success or fault)."""
        segments = [s for s in path.split("/") if s]
        if len(segments) == 1 and segments[0] == self.config.uuid:
            return build_metadata_response(request, self._metadata(),
                                           self.profile)
        if len(segments) == 2 and segments[0] == self.config.uuid:
            with self._lock:
                runtime = self._services.get(segments[1])
            if runtime is not None:
                return self._dispatch_service(runtime, request)
        return fault_envelope(
            "Sender", f"no service at path {path!r}",
            relates_to=request.message_id,
            subcode=QName(self.profile.addressing, "DestinationUnreachable"),
            profile=self.profile)

    def _dispatch_service(self, runtime: _ServiceRuntime,
                          request: SoapEnvelope) -> SoapEnvelope:
        handled = runtime.manager.handle(request)
        if handled is not None:
            return handled
        op = runtime.operations_by_action.get(request.action)
        if op is None:
            return fault_envelope(
                "Sender", f"action {request.action!r} is not supported by "
                f"service {runtime.definition.service_id!r}",
                relates_to=request.message_id,
                subcode=QName(self.profile.addressing, "ActionNotSupported"),
                profile=self.profile)
        return self._invoke(runtime, op, request)

    def _invoke(self, runtime: _ServiceRuntime, op: OperationDefinition,
                request: SoapEnvelope) -> SoapEnvelope:
        desc = runtime.description
        ns = desc.port_type.namespace
        try:
            value = self._decode_input(runtime, op, request.body)
        except TypeMismatch as exc:
            return fault_envelope("Sender", str(exc),
                                  relates_to=request.message_id,
                                  profile=self.profile)
        where = f"{runtime.definition.service_id}.{op.name}"
        completion = _Completion(where)
        try:
            if runtime.lock is not None:
                with runtime.lock:
                    op.handler(value, completion)
                    done = completion.wait(self.invocation_timeout)
            else:
                op.handler(value, completion)
                done = completion.wait(self.invocation_timeout)
        except Exception as exc:
            # A handler that raises after completing (including the
            # raise out of a duplicate completion call) already has a
            # result; exactly one response still goes out.
            if not completion.completed:
                log.exception("handler %s raised", where)
                return fault_envelope("Receiver", f"handler failed: {exc}",
                                      relates_to=request.message_id,
                                      profile=self.profile)
            log.warning("handler %s raised after completing: %s", where, exc)
            done = True
        if not done:
            return fault_envelope(
                "Receiver", f"handler for {op.name!r} did not complete within "
                f"{self.invocation_timeout:g}s",
                relates_to=request.message_id, profile=self.profile)
        if completion.error is not None:
            return fault_envelope("Receiver", str(completion.error),
                                  relates_to=request.message_id,
                                  profile=self.profile)
        children = []
        if op.output is not None:
            primitive = desc.primitive_of(op.output)
            try:
                text = encode_value(primitive, completion.value)
            except TypeMismatch as exc:
                log.error("handler %s produced a bad output: %s", where, exc)
                return fault_envelope("Receiver",
                                      f"handler produced invalid output: {exc}",
                                      relates_to=request.message_id,
                                      profile=self.profile)
            children.append(element(QName(ns, op.output), text=text))
        body = element(QName(ns, f"{op.name}Response"), *children)
        return envelope(desc.action_for(op.name) + "Response", body,
                        relates_to=request.message_id,
                        to=self.profile.anonymous)

    def _decode_input(self, runtime: _ServiceRuntime, op: OperationDefinition,
                      body: XmlElement | None):
        desc = runtime.description
        ns = desc.port_type.namespace
        expected = QName(ns, op.name)
        if body is None or body.name != expected:
            got = body.name if body is not None else "empty body"
            raise TypeMismatch(f"operation {op.name!r} expects body element "
                               f"{expected}, got {got}")
        children = [c for c in body.children if isinstance(c, XmlElement)]
        if op.input is None:
            if children:
                raise TypeMismatch(
                    f"operation {op.name!r} takes no input, got element "
                    f"{children[0].name}")
            return None
        input_name = QName(ns, op.input)
        if len(children) != 1 or children[0].name != input_name:
            got = children[0].name if children else "nothing"
            raise TypeMismatch(f"operation {op.name!r} expects exactly one "
                               f"{input_name} element, got {got}")
        primitive = desc.primitive_of(op.input)
        return decode_value(primitive, children[0].text,
                            where=f"element {op.input!r}")

    # -- HTTP --

    def _handle_http(self, method: str, path: str, body: bytes):
        if method == "GET":
            presentation = self.config.this_model.presentation_url
            if path == "/" and presentation:
                return 302, {"Location": presentation}, b""
            return 404, {"Content-Type": "text/plain"}, b"not found\n"
        if method != "POST":
            return 405, {"Content-Type": "text/plain"}, b"method not allowed\n"
        try:
            request = parse_envelope(body, max_size=HTTP_MAX_ENVELOPE)
        except DpwsError as exc:
            return 400, {"Content-Type": "text/plain"}, f"{exc}\n".encode()
        response = self.dispatch(request, path)
        status = 500 if response.is_fault else 200
        return status, {"Content-Type": SOAP_CONTENT_TYPE}, serialize_envelope(
            response, self.profile)

    # -- context manager --

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.stop()
        return False


def create_device(config: DeviceConfig, **kwargs) -> Device:
    """Build an inert device handle; nothing touches the network until
    start()."""
    return Device(config, **kwargs)
