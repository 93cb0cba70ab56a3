"""The consumer API: discover devices, open their metadata, invoke
typed operations and subscribe to events.

A DpwsClient is shareable across threads. invoke() opens one HTTP
exchange per call, so concurrent invocations never queue behind each
other client-side. subscribe() lazily starts one HTTP listener on an
ephemeral port to act as the notification sink; handlers run
sequentially per subscription.
"""
from __future__ import annotations

import logging
import threading
import uuid
from dataclasses import dataclass, replace

from .discovery import (
    DEFAULT_PROBE_TIMEOUT,
    SCOPE_RULE_RFC3986,
    DeviceAdvertisement,
    ProbeFilter,
    probe,
    resolve,
)
from .errors import (
    DpwsError,
    FaultReceived,
    InvalidTimeout,
    MalformedMetadata,
    NoTransportAddress,
    ProtocolError,
    SinkBindFailure,
    TypeMismatch,
    UnknownEvent,
    UnknownOperation,
)
from .eventing import (
    build_get_status,
    build_renew,
    build_subscribe,
    build_unsubscribe,
    parse_expires_response,
    parse_subscribe_response,
    parse_subscription_end,
    sequence_number_of,
)
from .metadata import (
    DeviceMetadata,
    ServiceDescription,
    get_metadata,
)
from .namespaces import ACTION_SUBSCRIPTION_END, DPWS11, VersionProfile
from .primitives import decode_value, encode_value
from .soap import (
    EndpointReference,
    SoapEnvelope,
    envelope,
    fault_info,
    parse_envelope,
    serialize_envelope,
)
from .transport import (
    HttpServer,
    MulticastEndpoint,
    http_post,
    primary_ipv4,
)
from .xmlcodec import QName, element

log = logging.getLogger(__name__)

DEFAULT_HTTP_TIMEOUT = 10.0


@dataclass(frozen=True)
class RemoteService:
    """Client-side view of one hosted service."""

    epr: EndpointReference
    service_id: str
    description: ServiceDescription

    @property
    def operations(self) -> tuple[tuple[str, str | None, str | None], ...]:
        return tuple((op.name, op.input, op.output)
                     for op in self.description.operations)

    @property
    def events(self) -> tuple[str, ...]:
        return tuple(ev.name for ev in self.description.events)


@dataclass(frozen=True)
class RemoteDevice:
    """A discovered device; services are present iff metadata was
    fetched via open()."""

    advertisement: DeviceAdvertisement
    metadata: DeviceMetadata | None = None
    services: tuple[RemoteService, ...] = ()

    @property
    def address(self) -> str:
        return self.advertisement.epr.address

    def service(self, service_id: str) -> RemoteService | None:
        for service in self.services:
            if service.service_id == service_id:
                return service
        return None


@dataclass(frozen=True)
class ClientNotification:
    """One delivered event, decoded per the service description."""

    event: str
    value: object
    sequence_number: int | None
    action: str


class ClientSubscription:
    """Handle for one active subscription: renew, status, unsubscribe.

    The end callback fires at most once, on a SubscriptionEnd from the
    device (shutdown or delivery failure), never on unsubscribe().
    """

    def __init__(self, client: "DpwsClient", service: RemoteService, event_name: str,
                 manager: EndpointReference, granted: float, handler, on_end,
                 sink_path: str):
        self._client = client
        self.service = service
        self.event = event_name
        self.manager = manager
        self.granted = granted
        self._handler = handler
        self._on_end = on_end
        self._sink_path = sink_path
        self._handler_lock = threading.Lock()
        self._ended = threading.Event()

    @property
    def ended(self) -> bool:
        return self._ended.is_set()

    def wait_ended(self, timeout: float | None = None) -> bool:
        return self._ended.wait(timeout)

    def renew(self, expires: float | None = None,
              timeout: float = DEFAULT_HTTP_TIMEOUT) -> float:
        """Extend the subscription; returns the newly granted seconds."""
        response = self._client._roundtrip(
            self.manager.address, build_renew(self.manager, expires), timeout)
        self.granted = parse_expires_response(response, "RenewResponse")
        return self.granted

    def status(self, timeout: float = DEFAULT_HTTP_TIMEOUT) -> float:
        """Remaining seconds before expiry, as reported by the device."""
        response = self._client._roundtrip(
            self.manager.address, build_get_status(self.manager), timeout)
        return parse_expires_response(response, "GetStatusResponse")

    def unsubscribe(self, timeout: float = DEFAULT_HTTP_TIMEOUT):
        """Cancel at the device and stop routing notifications."""
        try:
            self._client._roundtrip(
                self.manager.address, build_unsubscribe(self.manager), timeout)
        finally:
            self._ended.set()
            self._client._drop_subscription(self._sink_path)

    # -- sink-side plumbing --

    def _deliver(self, env: SoapEnvelope):
        if env.action == ACTION_SUBSCRIPTION_END:
            self._fire_end(env)
            return
        notification = self._decode(env)
        if notification is None:
            return
        with self._handler_lock:
            try:
                self._handler(notification)
            except Exception:
                log.exception("notification handler failed for %s", self.event)

    def _decode(self, env: SoapEnvelope) -> ClientNotification | None:
        desc = self.service.description
        ns = desc.port_type.namespace
        body = env.body
        event = None
        for candidate in desc.events:
            if env.action == desc.action_for(candidate.name):
                event = candidate
                break
        if event is None or body is None or body.name != QName(ns, event.name):
            log.warning("unrecognized notification action %r dropped", env.action)
            return None
        payload = body.find(QName(ns, event.payload))
        if payload is None:
            log.warning("notification for %s lacks payload element", event.name)
            return None
        try:
            value = decode_value(desc.primitive_of(event.payload), payload.text,
                                 where=f"event {event.name!r}")
        except TypeMismatch as exc:
            log.warning("notification payload rejected: %s", exc)
            return None
        return ClientNotification(event=event.name, value=value,
                                  sequence_number=sequence_number_of(env),
                                  action=env.action)

    def _fire_end(self, env: SoapEnvelope):
        if self._ended.is_set():
            return
        self._ended.set()
        self._client._drop_subscription(self._sink_path)
        if self._on_end is None:
            return
        try:
            _, status, reason = parse_subscription_end(env)
        except ProtocolError:
            status, reason = "", ""
        try:
            self._on_end(status, reason)
        except Exception:
            log.exception("subscription end callback failed")


class DpwsClient:
    """Discovery, metadata, invocation and subscription in one handle."""

    def __init__(
        self,
        profile: VersionProfile = DPWS11,
        endpoint: MulticastEndpoint | None = None,
        sink_host: str | None = None,
    ):
        self.profile = profile
        self.endpoint = endpoint
        self._sink_host = sink_host
        self._lock = threading.Lock()
        self._sink: HttpServer | None = None
        self._sink_base = ""
        self._subscriptions: dict[str, ClientSubscription] = {}

    # -- discovery --

    def discover(
        self,
        types: tuple[QName, ...] = (),
        scopes: tuple[str, ...] = (),
        scope_rule: str = SCOPE_RULE_RFC3986,
        timeout: float = DEFAULT_PROBE_TIMEOUT,
    ) -> list[RemoteDevice]:
        """Multicast one Probe and collect matches until the timeout."""
        if timeout <= 0:
            raise InvalidTimeout(f"probe timeout must be positive, got {timeout!r}")
        filter = ProbeFilter(types=types, scopes=scopes, scope_rule=scope_rule)
        matches = probe(filter, timeout=timeout, endpoint=self.endpoint,
                        profile=self.profile)
        return [RemoteDevice(advertisement=adv) for adv in matches]

    # -- metadata --

    def open(self, target, timeout: float = DEFAULT_HTTP_TIMEOUT) -> RemoteDevice:
        """Fetch metadata and service descriptions for a device.

        target may be a RemoteDevice, a DeviceAdvertisement or a
        transport address string. Performs a Resolve first when the
        advertisement carries no transport address.
        """
        if isinstance(target, str):
            device = RemoteDevice(advertisement=DeviceAdvertisement(
                epr=EndpointReference(""), xaddrs=(target,)))
        elif isinstance(target, DeviceAdvertisement):
            device = RemoteDevice(advertisement=target)
        else:
            device = target
        adv = device.advertisement
        if not adv.xaddrs:
            resolved = resolve(adv.epr, endpoint=self.endpoint,
                               profile=self.profile)
            if resolved is None or not resolved.xaddrs:
                raise NoTransportAddress(
                    f"no transport address for {adv.epr.address!r}")
            adv = resolved
            device = replace(device, advertisement=adv)
        metadata = self._fetch_metadata(adv.xaddrs, timeout)
        services = []
        for hosted in metadata.relationship.hosted:
            if not hosted.service_id:
                raise MalformedMetadata("hosted entry carries no service id")
            if hosted.description is None:
                raise MalformedMetadata(
                    f"hosted service {hosted.service_id!r} carries no "
                    "service description")
            services.append(RemoteService(epr=hosted.epr,
                                          service_id=hosted.service_id,
                                          description=hosted.description))
        return replace(device, metadata=metadata, services=tuple(services))

    def _fetch_metadata(self, xaddrs: tuple[str, ...],
                        timeout: float) -> DeviceMetadata:
        last: DpwsError | None = None
        for xaddr in xaddrs:
            try:
                return get_metadata(xaddr, timeout=timeout, profile=self.profile)
            except (FaultReceived, MalformedMetadata):
                raise
            except DpwsError as exc:
                last = exc
        assert last is not None
        raise last

    # -- invocation --

    def invoke(self, service: RemoteService, operation: str, input=None,
               timeout: float = DEFAULT_HTTP_TIMEOUT):
        """Call one operation and return its decoded output (None for
        output-less operations). Validates locally before any network
        traffic."""
        desc = service.description
        op = desc.operation(operation)
        if op is None:
            raise UnknownOperation(
                f"service {service.service_id!r} has no operation {operation!r}")
        ns = desc.port_type.namespace
        children = []
        if op.input is None:
            if input is not None:
                raise TypeMismatch(
                    f"operation {operation!r} declares no input, got {input!r}")
        else:
            text = encode_value(desc.primitive_of(op.input), input)
            children.append(element(QName(ns, op.input), text=text))
        request = envelope(desc.action_for(operation),
                           element(QName(ns, operation), *children),
                           to=service.epr.address,
                           extension_headers=tuple(service.epr.reference_parameters))
        response = self._roundtrip(service.epr.address, request, timeout)
        return self._decode_output(desc, op, response)

    def _decode_output(self, desc: ServiceDescription, op, response: SoapEnvelope):
        ns = desc.port_type.namespace
        body = response.body
        expected = QName(ns, f"{op.name}Response")
        if body is None or body.name != expected:
            got = body.name if body is not None else "empty body"
            raise ProtocolError(f"expected {expected} response element, got {got}")
        if op.output is None:
            return None
        payload = body.find(QName(ns, op.output))
        if payload is None:
            raise ProtocolError(f"response lacks output element {op.output!r}")
        return decode_value(desc.primitive_of(op.output), payload.text,
                            where=f"output {op.output!r}")

    def _roundtrip(self, url: str, request: SoapEnvelope,
                   timeout: float) -> SoapEnvelope:
        exchange = http_post(url, serialize_envelope(request, self.profile),
                             timeout=timeout)
        response = parse_envelope(exchange.body)
        if response.is_fault:
            info = fault_info(response)
            raise FaultReceived(info.code, info.reason, info.subcode)
        return response

    # -- subscription --

    def subscribe(self, service: RemoteService, event_name: str, handler,
                  expires: float | None = None, on_end=None,
                  timeout: float = DEFAULT_HTTP_TIMEOUT) -> ClientSubscription:
        """Subscribe to one event; handler(ClientNotification) runs
        once per delivery, in arrival order."""
        desc = service.description
        event = desc.event(event_name)
        if event is None:
            raise UnknownEvent(
                f"service {service.service_id!r} has no event {event_name!r}")
        sink_base = self._ensure_sink()
        sink_path = f"/sink/{uuid.uuid4()}"
        request = build_subscribe(
            EndpointReference(f"{sink_base}{sink_path}"),
            to=service.epr.address,
            expires=expires,
            filter_actions=(desc.action_for(event_name),),
            profile=self.profile)
        response = self._roundtrip(service.epr.address, request, timeout)
        manager, granted = parse_subscribe_response(response)
        subscription = ClientSubscription(self, service, event_name, manager,
                                          granted, handler, on_end, sink_path)
        with self._lock:
            self._subscriptions[sink_path] = subscription
        return subscription

    def _ensure_sink(self) -> str:
        with self._lock:
            if self._sink is None:
                try:
                    sink = HttpServer(0, self._handle_sink, host="0.0.0.0")
                    sink.start()
                except DpwsError as exc:
                    raise SinkBindFailure(str(exc)) from exc
                host = self._sink_host or primary_ipv4()
                self._sink = sink
                self._sink_base = f"http://{host}:{sink.port}"
            return self._sink_base

    def _handle_sink(self, method: str, path: str, body: bytes):
        if method != "POST":
            return 405, {"Content-Type": "text/plain"}, b"method not allowed\n"
        try:
            env = parse_envelope(body)
        except DpwsError as exc:
            return 400, {"Content-Type": "text/plain"}, f"{exc}\n".encode()
        with self._lock:
            subscription = self._subscriptions.get(path)
        if subscription is None:
            return 404, {"Content-Type": "text/plain"}, b"unknown sink\n"
        subscription._deliver(env)
        return 202, {}, b""

    def _drop_subscription(self, sink_path: str):
        with self._lock:
            self._subscriptions.pop(sink_path, None)

    # -- lifecycle --

    def close(self):
        """Stop the sink listener; active subscriptions at the device
        are left to expire (call unsubscribe() to cancel eagerly)."""
        with self._lock:
            sink = self._sink
            self._sink = None
            self._sink_base = ""
            self._subscriptions.clear()
        if sink is not None:
            sink.stop(drain=1.0)

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()
        return False
