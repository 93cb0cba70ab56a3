"""WS-Eventing: push subscriptions with expiry, renewal and delivery.

The device side is SubscriptionManager: it answers Subscribe / Renew /
GetStatus / Unsubscribe envelopes, fans notification deliveries out to
sinks, cancels a subscription after three consecutive delivery failures
(attempting one SubscriptionEnd), and expires subscriptions against an
injectable clock. The wire codecs here serve both sides; the client
glue lives in dpws.client.
"""
from __future__ import annotations

import datetime
import logging
import re
import threading
import time
import uuid
from dataclasses import dataclass

from .errors import ProtocolError
from .namespaces import (
    ACTION_GET_STATUS,
    ACTION_GET_STATUS_RESPONSE,
    ACTION_RENEW,
    ACTION_RENEW_RESPONSE,
    ACTION_SUBSCRIBE,
    ACTION_SUBSCRIBE_RESPONSE,
    ACTION_SUBSCRIPTION_END,
    ACTION_UNSUBSCRIBE,
    ACTION_UNSUBSCRIBE_RESPONSE,
    DELIVERY_MODE_PUSH,
    DPWS11,
    EVENTING_EXT_NS,
    WSE,
    VersionProfile,
)
from .soap import (
    EndpointReference,
    SoapEnvelope,
    envelope,
    epr_element,
    fault_envelope,
    parse_epr,
    serialize_envelope,
)
from .transport import http_post
from .xmlcodec import QName, XmlElement, element

log = logging.getLogger(__name__)

DEFAULT_MAX_DURATION = 3600.0
FAILURE_LIMIT = 3

STATUS_ACTIVE = "active"
STATUS_CANCELLED = "cancelled"
STATUS_EXPIRED = "expired"

END_SOURCE_SHUTTING_DOWN = f"{WSE}/SourceShuttingDown"
END_SOURCE_CANCELLING = f"{WSE}/SourceCancelling"
END_DELIVERY_FAILURE = f"{WSE}/DeliveryFailure"

_IDENTIFIER = QName(WSE, "Identifier")
_SEQUENCE = QName(EVENTING_EXT_NS, "SequenceNumber")


# --- durations ---

_DURATION = re.compile(
    r"^P(?:(?P<d>\d+)D)?(?:T(?:(?P<h>\d+)H)?(?:(?P<m>\d+)M)?(?:(?P<s>\d+(?:\.\d+)?)S)?)?$")


def format_duration(seconds: float) -> str:
    if seconds == int(seconds):
        return f"PT{int(seconds)}S"
    return f"PT{seconds}S"


def parse_expiry(text: str) -> float:
    """Requested expiry text -> duration in seconds from now.

    Durations use the day/time subset of the XML duration form;
    absolute times are ISO 8601 and are diffed against the wall clock.
    A non-positive result means the request asked for the past.
    """
    text = text.strip()
    if text.startswith("P"):
        match = _DURATION.match(text)
        if match is None:
            raise ProtocolError(f"unparseable duration {text!r}")
        days = int(match.group("d") or 0)
        hours = int(match.group("h") or 0)
        minutes = int(match.group("m") or 0)
        seconds = float(match.group("s") or 0)
        return days * 86400 + hours * 3600 + minutes * 60 + seconds
    try:
        moment = datetime.datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError:
        raise ProtocolError(f"unparseable expiry {text!r}") from None
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=datetime.timezone.utc)
    return moment.timestamp() - time.time()


# --- wire codecs ---

@dataclass(frozen=True)
class SubscribeRequest:
    sink: EndpointReference
    end_to: EndpointReference | None = None
    expires: float | None = None
    filter_actions: tuple[str, ...] = ()
    delivery_mode: str = DELIVERY_MODE_PUSH


def build_subscribe(
    sink: EndpointReference,
    to: str,
    end_to: EndpointReference | None = None,
    expires: float | None = None,
    filter_actions: tuple[str, ...] = (),
    profile: VersionProfile = DPWS11,
) -> SoapEnvelope:
    children = []
    if end_to is not None:
        children.append(epr_element(QName(WSE, "EndTo"), end_to, profile))
    children.append(element(
        QName(WSE, "Delivery"),
        epr_element(QName(WSE, "NotifyTo"), sink, profile),
        attrs=((QName("", "Mode"), DELIVERY_MODE_PUSH),)))
    if expires is not None:
        children.append(element(QName(WSE, "Expires"), text=format_duration(expires)))
    if filter_actions:
        children.append(element(
            QName(WSE, "Filter"), text=" ".join(filter_actions),
            attrs=((QName("", "Dialect"), profile.action_filter_dialect),)))
    return envelope(ACTION_SUBSCRIBE, element(QName(WSE, "Subscribe"), *children), to=to)


def parse_subscribe(env: SoapEnvelope,
                    profile: VersionProfile = DPWS11) -> SubscribeRequest:
    body = env.body
    if body is None or body.name != QName(WSE, "Subscribe"):
        raise ProtocolError("not a Subscribe body")
    delivery = body.find(QName(WSE, "Delivery"))
    if delivery is None:
        raise ProtocolError("Subscribe carries no Delivery element")
    mode = delivery.attr("Mode") or DELIVERY_MODE_PUSH
    notify_to = delivery.find(QName(WSE, "NotifyTo"))
    if notify_to is None:
        raise ProtocolError("Delivery carries no NotifyTo sink")
    sink = parse_epr(notify_to)
    end_to_elem = body.find(QName(WSE, "EndTo"))
    end_to = parse_epr(end_to_elem) if end_to_elem is not None else None
    expires_elem = body.find(QName(WSE, "Expires"))
    expires = parse_expiry(expires_elem.text) if expires_elem is not None else None
    filter_elem = body.find(QName(WSE, "Filter"))
    filter_actions: tuple[str, ...] = ()
    if filter_elem is not None:
        dialect = filter_elem.attr("Dialect")
        if dialect is not None and dialect not in (
                DPWS11.action_filter_dialect,
                profile.action_filter_dialect):
            raise ProtocolError(f"unsupported filter dialect {dialect!r}")
        filter_actions = tuple(filter_elem.text.split())
    return SubscribeRequest(sink=sink, end_to=end_to, expires=expires,
                            filter_actions=filter_actions, delivery_mode=mode)


def identifier_element(subscription_id: str) -> XmlElement:
    return element(_IDENTIFIER, text=subscription_id)


def identifier_of(env: SoapEnvelope) -> str | None:
    for header in env.extension_headers:
        if header.name == _IDENTIFIER:
            return header.text.strip()
    return None


def sequence_number_of(env: SoapEnvelope) -> int | None:
    for header in env.extension_headers:
        if header.name == _SEQUENCE:
            try:
                return int(header.text.strip())
            except ValueError:
                return None
    return None


def manager_epr(manager_address: str, subscription_id: str) -> EndpointReference:
    return EndpointReference(
        address=manager_address,
        reference_parameters=(identifier_element(subscription_id),))


def build_subscribe_response(request: SoapEnvelope, manager: EndpointReference,
                             granted: float,
                             profile: VersionProfile = DPWS11) -> SoapEnvelope:
    body = element(
        QName(WSE, "SubscribeResponse"),
        epr_element(QName(WSE, "SubscriptionManager"), manager, profile),
        element(QName(WSE, "Expires"), text=format_duration(granted)))
    return envelope(ACTION_SUBSCRIBE_RESPONSE, body,
                    relates_to=request.message_id, to=profile.anonymous)


def parse_subscribe_response(env: SoapEnvelope) -> tuple[EndpointReference, float]:
    body = env.body
    if body is None or body.name != QName(WSE, "SubscribeResponse"):
        raise ProtocolError("not a SubscribeResponse body")
    manager_elem = body.find(QName(WSE, "SubscriptionManager"))
    if manager_elem is None:
        raise ProtocolError("SubscribeResponse carries no SubscriptionManager")
    expires_elem = body.find(QName(WSE, "Expires"))
    granted = parse_expiry(expires_elem.text) if expires_elem is not None else 0.0
    return parse_epr(manager_elem), granted


def build_renew(manager: EndpointReference, expires: float | None = None,
                profile: VersionProfile = DPWS11) -> SoapEnvelope:
    children = []
    if expires is not None:
        children.append(element(QName(WSE, "Expires"), text=format_duration(expires)))
    return envelope(ACTION_RENEW, element(QName(WSE, "Renew"), *children),
                    to=manager.address,
                    extension_headers=tuple(manager.reference_parameters))


def build_get_status(manager: EndpointReference,
                     profile: VersionProfile = DPWS11) -> SoapEnvelope:
    return envelope(ACTION_GET_STATUS, element(QName(WSE, "GetStatus")),
                    to=manager.address,
                    extension_headers=tuple(manager.reference_parameters))


def build_unsubscribe(manager: EndpointReference,
                      profile: VersionProfile = DPWS11) -> SoapEnvelope:
    return envelope(ACTION_UNSUBSCRIBE, element(QName(WSE, "Unsubscribe")),
                    to=manager.address,
                    extension_headers=tuple(manager.reference_parameters))


def parse_expires_response(env: SoapEnvelope, body_name: str) -> float:
    body = env.body
    if body is None or body.name != QName(WSE, body_name):
        raise ProtocolError(f"not a {body_name} body")
    expires_elem = body.find(QName(WSE, "Expires"))
    if expires_elem is None:
        raise ProtocolError(f"{body_name} carries no Expires")
    return parse_expiry(expires_elem.text)


def build_notification(action: str, body: XmlElement | None,
                       sub: "Subscription", sequence_number: int) -> SoapEnvelope:
    headers = tuple(sub.sink.reference_parameters) + (
        element(_SEQUENCE, text=str(sequence_number)),)
    return envelope(action, body, to=sub.sink.address, extension_headers=headers)


def build_subscription_end(manager: EndpointReference, status: str, reason: str,
                           to: EndpointReference,
                           profile: VersionProfile = DPWS11) -> SoapEnvelope:
    body = element(
        QName(WSE, "SubscriptionEnd"),
        epr_element(QName(WSE, "SubscriptionManager"), manager, profile),
        element(QName(WSE, "Status"), text=status),
        element(QName(WSE, "Reason"), text=reason))
    return envelope(ACTION_SUBSCRIPTION_END, body, to=to.address,
                    extension_headers=tuple(to.reference_parameters))


def parse_subscription_end(env: SoapEnvelope) -> tuple[EndpointReference | None, str, str]:
    body = env.body
    if body is None or body.name != QName(WSE, "SubscriptionEnd"):
        raise ProtocolError("not a SubscriptionEnd body")
    manager_elem = body.find(QName(WSE, "SubscriptionManager"))
    manager = parse_epr(manager_elem) if manager_elem is not None else None
    status_elem = body.find(QName(WSE, "Status"))
    reason_elem = body.find(QName(WSE, "Reason"))
    return (manager,
            status_elem.text.strip() if status_elem is not None else "",
            reason_elem.text.strip() if reason_elem is not None else "")


# --- device-side manager ---

@dataclass
class Subscription:
    """One sink's registration. status only ever moves active ->
    cancelled or active -> expired."""

    id: str
    sink: EndpointReference
    expires_at: float
    end_to: EndpointReference | None = None
    filter_actions: tuple[str, ...] = ()
    status: str = STATUS_ACTIVE
    failure_count: int = 0
    sequence: int = 0

    def admits(self, action: str) -> bool:
        return not self.filter_actions or action in self.filter_actions


@dataclass(frozen=True)
class DeliverySummary:
    subscription_id: str
    ok: bool
    error: str = ""


class SubscriptionManager:
    """Owns the subscription table of one event source.

    State updates are serialized under one lock; notification POSTs fan
    out on worker threads. The clock is injectable so expiry behavior is
    testable without waiting.
    """

    def __init__(
        self,
        manager_address: str,
        valid_actions: tuple[str, ...] | None = None,
        max_duration: float = DEFAULT_MAX_DURATION,
        clock=time.monotonic,
        profile: VersionProfile = DPWS11,
        post=http_post,
        delivery_timeout: float = 5.0,
    ):
        self.manager_address = manager_address
        self.valid_actions = valid_actions
        self.max_duration = max_duration
        self.clock = clock
        self.profile = profile
        self.post = post
        self.delivery_timeout = delivery_timeout
        self._lock = threading.Lock()
        self._subs: dict[str, Subscription] = {}

    # -- request handling --

    HANDLED_ACTIONS = (ACTION_SUBSCRIBE, ACTION_RENEW, ACTION_GET_STATUS,
                       ACTION_UNSUBSCRIBE)

    def handle(self, env: SoapEnvelope) -> SoapEnvelope | None:
        """Answer one subscription-management envelope; None if the
        action is not an eventing action (the caller keeps dispatching)."""
        if env.action == ACTION_SUBSCRIBE:
            return self._handle_subscribe(env)
        if env.action == ACTION_RENEW:
            return self._handle_renew(env)
        if env.action == ACTION_GET_STATUS:
            return self._handle_get_status(env)
        if env.action == ACTION_UNSUBSCRIBE:
            return self._handle_unsubscribe(env)
        return None

    def _fault(self, env: SoapEnvelope, reason: str, subcode_local: str) -> SoapEnvelope:
        return fault_envelope("Sender", reason, relates_to=env.message_id,
                              subcode=QName(WSE, subcode_local), profile=self.profile)

    def _handle_subscribe(self, env: SoapEnvelope) -> SoapEnvelope:
        try:
            request = parse_subscribe(env, self.profile)
        except ProtocolError as exc:
            return self._fault(env, str(exc), "EventSourceUnableToProcess")
        if request.delivery_mode != DELIVERY_MODE_PUSH:
            return self._fault(env, f"delivery mode {request.delivery_mode!r} "
                               "is not available (push only)",
                               "DeliveryModeRequestedUnavailable")
        if request.expires is not None and request.expires <= 0:
            return self._fault(env, "requested expiration is in the past",
                               "InvalidExpirationTime")
        if self.valid_actions is not None:
            unknown = [a for a in request.filter_actions if a not in self.valid_actions]
            if unknown:
                return self._fault(env, f"filter names unknown event actions: "
                                   f"{', '.join(unknown)}",
                                   "FilteringRequestedUnavailable")
        granted = self._clamp(request.expires)
        sub = Subscription(
            id=f"urn:uuid:{uuid.uuid4()}",
            sink=request.sink,
            end_to=request.end_to,
            expires_at=self.clock() + granted,
            filter_actions=request.filter_actions,
        )
        with self._lock:
            self._subs[sub.id] = sub
        return build_subscribe_response(
            env, manager_epr(self.manager_address, sub.id), granted, self.profile)

    def _clamp(self, requested: float | None) -> float:
        if requested is None:
            return min(DEFAULT_MAX_DURATION, self.max_duration)
        return min(requested, self.max_duration)

    def _active_for_request(self, env: SoapEnvelope) -> Subscription | None:
        sub_id = identifier_of(env)
        if sub_id is None:
            return None
        with self._lock:
            sub = self._subs.get(sub_id)
            if sub is None or sub.status != STATUS_ACTIVE:
                return None
            if sub.expires_at <= self.clock():
                sub.status = STATUS_EXPIRED
                return None
            return sub

    def _handle_renew(self, env: SoapEnvelope) -> SoapEnvelope:
        sub = self._active_for_request(env)
        if sub is None:
            return self._fault(env, "unknown or inactive subscription",
                               "UnknownSubscription")
        try:
            body = env.body
            expires_elem = body.find(QName(WSE, "Expires")) if body is not None else None
            requested = parse_expiry(expires_elem.text) if expires_elem is not None else None
        except ProtocolError as exc:
            return self._fault(env, str(exc), "InvalidExpirationTime")
        if requested is not None and requested <= 0:
            return self._fault(env, "requested expiration is in the past",
                               "InvalidExpirationTime")
        granted = self._clamp(requested)
        with self._lock:
            sub.expires_at = self.clock() + granted
        body = element(QName(WSE, "RenewResponse"),
                       element(QName(WSE, "Expires"), text=format_duration(granted)))
        return envelope(ACTION_RENEW_RESPONSE, body, relates_to=env.message_id,
                        to=self.profile.anonymous)

    def _handle_get_status(self, env: SoapEnvelope) -> SoapEnvelope:
        sub = self._active_for_request(env)
        if sub is None:
            return self._fault(env, "unknown or inactive subscription",
                               "UnknownSubscription")
        remaining = max(0.0, sub.expires_at - self.clock())
        body = element(QName(WSE, "GetStatusResponse"),
                       element(QName(WSE, "Expires"), text=format_duration(remaining)))
        return envelope(ACTION_GET_STATUS_RESPONSE, body, relates_to=env.message_id,
                        to=self.profile.anonymous)

    def _handle_unsubscribe(self, env: SoapEnvelope) -> SoapEnvelope:
        sub = self._active_for_request(env)
        if sub is None:
            return self._fault(env, "unknown or inactive subscription",
                               "UnknownSubscription")
        with self._lock:
            sub.status = STATUS_CANCELLED
        return envelope(ACTION_UNSUBSCRIBE_RESPONSE,
                        element(QName(WSE, "UnsubscribeResponse")),
                        relates_to=env.message_id, to=self.profile.anonymous)

    # -- delivery --

    def emit(self, action: str, body: XmlElement | None) -> list[DeliverySummary]:
        """Deliver one event to every admitted active subscription.

        Deliveries run concurrently; each is at-most-once (no retry
        queue). Three consecutive failures cancel the subscription and
        one SubscriptionEnd is attempted.
        """
        now = self.clock()
        with self._lock:
            targets = []
            for sub in self._subs.values():
                if sub.status != STATUS_ACTIVE or sub.expires_at <= now:
                    continue
                if not sub.admits(action):
                    continue
                sub.sequence += 1
                targets.append((sub, sub.sequence))
        if not targets:
            return []
        summaries: list[DeliverySummary] = [None] * len(targets)  # type: ignore[list-item]
        threads = []
        for i, (sub, seq) in enumerate(targets):
            thread = threading.Thread(
                target=self._deliver_one, args=(action, body, sub, seq, summaries, i),
                daemon=True)
            thread.start()
            threads.append(thread)
        for thread in threads:
            thread.join()
        return list(summaries)

    def _deliver_one(self, action: str, body: XmlElement | None, sub: Subscription,
                     seq: int, summaries: list, index: int):
        notification = build_notification(action, body, sub, seq)
        error = ""
        try:
            exchange = self.post(sub.sink.address,
                                 serialize_envelope(notification, self.profile),
                                 timeout=self.delivery_timeout)
            ok = 200 <= exchange.status < 300
            if not ok:
                error = f"sink answered {exchange.status}"
        except Exception as exc:
            ok = False
            error = str(exc)
        end_needed = False
        with self._lock:
            if ok:
                sub.failure_count = 0
            else:
                sub.failure_count += 1
                if sub.failure_count >= FAILURE_LIMIT and sub.status == STATUS_ACTIVE:
                    sub.status = STATUS_CANCELLED
                    end_needed = True
        if end_needed:
            self._send_end(sub, END_DELIVERY_FAILURE,
                           f"{FAILURE_LIMIT} consecutive delivery failures")
        summaries[index] = DeliverySummary(subscription_id=sub.id, ok=ok, error=error)

    def _send_end(self, sub: Subscription, status: str, reason: str):
        target = sub.end_to or sub.sink
        env = build_subscription_end(
            manager_epr(self.manager_address, sub.id), status, reason, target,
            self.profile)
        try:
            self.post(target.address, serialize_envelope(env, self.profile),
                      timeout=self.delivery_timeout)
        except Exception as exc:
            log.warning("SubscriptionEnd to %s failed: %s", target.address, exc)

    # -- lifecycle --

    def expire_subscriptions(self, now: float | None = None) -> int:
        """Move every active subscription past its expiry to expired.
        Natural expiry sends no SubscriptionEnd."""
        if now is None:
            now = self.clock()
        count = 0
        with self._lock:
            for sub in self._subs.values():
                if sub.status == STATUS_ACTIVE and sub.expires_at <= now:
                    sub.status = STATUS_EXPIRED
                    count += 1
        return count

    def end_all(self, status: str = END_SOURCE_SHUTTING_DOWN,
                reason: str = "event source shutting down") -> int:
        """Cancel every active subscription, attempting one
        SubscriptionEnd each; used on device shutdown."""
        with self._lock:
            ending = [sub for sub in self._subs.values()
                      if sub.status == STATUS_ACTIVE]
            for sub in ending:
                sub.status = STATUS_CANCELLED
        for sub in ending:
            self._send_end(sub, status, reason)
        return len(ending)

    def subscription(self, sub_id: str) -> Subscription | None:
        with self._lock:
            return self._subs.get(sub_id)

    def active_count(self) -> int:
        now = self.clock()
        with self._lock:
            return sum(1 for sub in self._subs.values()
                       if sub.status == STATUS_ACTIVE and sub.expires_at > now)
