"""WS-Discovery in ad-hoc mode.

Announce (Hello/Bye), respond (ProbeMatch/ResolveMatch) and search
(Probe/Resolve) over SOAP-over-UDP multicast. Message ordering uses
AppSequence; the responder suppresses retransmitted duplicates by
message id and delays ProbeMatch replies by a uniform random backoff so
simultaneous responders do not collide.
"""
from __future__ import annotations

import logging
import random
import selectors
import socket
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass

from . import transport
from .errors import (
    MalformedXml,
    MissingAction,
    NotSoap,
    Oversize,
    ProtocolError,
    SocketError,
)
from .namespaces import DPWS11, PROFILES, VersionProfile
from .soap import (
    UDP_MAX_ENVELOPE,
    EndpointReference,
    SoapEnvelope,
    envelope,
    epr_element,
    parse_envelope,
    parse_epr,
    serialize_envelope,
)
from .transport import MulticastEndpoint, RetransmitPolicy, UdpListener, udp_send
from .xmlcodec import (
    QName,
    XmlElement,
    element,
    ns_scope,
    parse_qname_list,
    qname_list_content,
)

log = logging.getLogger(__name__)

PROBE_MATCH_MAX_DELAY = 0.500
DEDUPE_WINDOW = 60.0
DEDUPE_CAPACITY = 1024
DEFAULT_PROBE_TIMEOUT = 4.0

SCOPE_RULE_RFC3986 = "rfc3986"
SCOPE_RULE_STRCMP0 = "strcmp0"
SCOPE_RULE_NONE = "none"


# --- sequencing ---

@dataclass(frozen=True)
class AppSequence:
    """Ordering stamp carried by every announcement and response.
    Compare with is_newer, not field order."""

    instance_id: int
    message_number: int
    sequence_id: str = ""

    def __post_init__(self):
        if self.instance_id < 0 or self.message_number < 0:
            raise ValueError("AppSequence fields are unsigned")


def is_newer(a: AppSequence, b: AppSequence) -> bool:
    """True iff a was emitted after b by the ordering rule: higher
    instance wins, then higher message number."""
    if a.instance_id != b.instance_id:
        return a.instance_id > b.instance_id
    return a.message_number > b.message_number


class AppSequenceSource:
    """Hands out strictly increasing message numbers for one instance.

    The instance id defaults to process start time in Unix seconds, so a
    restarted device is always newer than its previous life without any
    persistence.
    """

    def __init__(self, instance_id: int | None = None):
        self.instance_id = int(time.time()) if instance_id is None else instance_id
        self._lock = threading.Lock()
        self._number = 0

    def next(self) -> AppSequence:
        with self._lock:
            self._number += 1
            return AppSequence(self.instance_id, self._number)


_process_source: AppSequenceSource | None = None
_process_source_lock = threading.Lock()


def process_sequence_source() -> AppSequenceSource:
    """The per-process source: all devices in one process share its
    instance id and draw from one counter."""
    global _process_source
    with _process_source_lock:
        if _process_source is None:
            _process_source = AppSequenceSource()
        return _process_source


# --- advertisements and filters ---

@dataclass(frozen=True)
class DeviceAdvertisement:
    """What a device says about itself on the discovery channel."""

    epr: EndpointReference
    types: tuple[QName, ...] = ()
    scopes: tuple[str, ...] = ()
    xaddrs: tuple[str, ...] = ()
    metadata_version: int = 1


@dataclass(frozen=True)
class ProbeFilter:
    """Search criteria: all listed types and all listed scopes must
    match. Empty types and empty scopes form the universal filter."""

    types: tuple[QName, ...] = ()
    scopes: tuple[str, ...] = ()
    scope_rule: str = SCOPE_RULE_RFC3986

    def __post_init__(self):
        if self.scope_rule not in (SCOPE_RULE_RFC3986, SCOPE_RULE_STRCMP0, SCOPE_RULE_NONE):
            raise ValueError(f"unknown scope rule {self.scope_rule!r}")

    @property
    def is_universal(self) -> bool:
        return not self.types and not self.scopes


def _split_scope(scope: str) -> tuple[str, str, tuple[str, ...]]:
    """Split an IRI into (scheme, authority, path segments), ignoring
    query and fragment. Empty segments from doubled or trailing slashes
    do not count."""
    rest = scope
    scheme = ""
    if ":" in rest:
        head, _, tail = rest.partition(":")
        scheme, rest = head, tail
    authority = ""
    if rest.startswith("//"):
        rest = rest[2:]
        slash = rest.find("/")
        if slash < 0:
            authority, rest = rest, ""
        else:
            authority, rest = rest[:slash], rest[slash:]
    for sep in ("?", "#"):
        cut = rest.find(sep)
        if cut >= 0:
            rest = rest[:cut]
    segments = tuple(seg for seg in rest.split("/") if seg)
    return scheme.lower(), authority.lower(), segments


def _scope_matches_rfc3986(probe_scope: str, device_scope: str) -> bool:
    p_scheme, p_auth, p_segs = _split_scope(probe_scope)
    d_scheme, d_auth, d_segs = _split_scope(device_scope)
    if p_scheme != d_scheme or p_auth != d_auth:
        return False
    if len(p_segs) > len(d_segs):
        return False
    return all(p == d for p, d in zip(p_segs, d_segs))


def match_probe(filter: ProbeFilter, adv: DeviceAdvertisement) -> bool:
    """Decide whether an advertisement satisfies a probe filter.

    Types use subset inclusion under QName equality. Scopes match per
    the filter's rule: rfc3986 compares scheme and authority without
    case and requires the probe scope's path segments to be a prefix of
    the device scope's (segment-wise, case-sensitive); strcmp0 is exact
    string equality; none never matches a non-empty scope list.
    """
    for wanted in filter.types:
        if wanted not in adv.types:
            return False
    if not filter.scopes:
        return True
    if filter.scope_rule == SCOPE_RULE_NONE:
        return False
    for wanted in filter.scopes:
        if filter.scope_rule == SCOPE_RULE_STRCMP0:
            if wanted not in adv.scopes:
                return False
        else:
            if not any(_scope_matches_rfc3986(wanted, have) for have in adv.scopes):
                return False
    return True


# --- wire codecs ---

def _wsd(profile: VersionProfile, local: str) -> QName:
    return QName(profile.discovery, local)


def _app_sequence_header(seq: AppSequence, profile: VersionProfile) -> XmlElement:
    attrs = [(QName("", "InstanceId"), str(seq.instance_id)),
             (QName("", "MessageNumber"), str(seq.message_number))]
    if seq.sequence_id:
        attrs.insert(1, (QName("", "SequenceId"), seq.sequence_id))
    return element(_wsd(profile, "AppSequence"), attrs=tuple(attrs))


def parse_app_sequence(env: SoapEnvelope) -> AppSequence | None:
    for header in env.extension_headers:
        for profile in PROFILES.values():
            if header.name == _wsd(profile, "AppSequence"):
                try:
                    return AppSequence(
                        instance_id=int(header.attr("InstanceId") or "0"),
                        message_number=int(header.attr("MessageNumber") or "0"),
                        sequence_id=header.attr("SequenceId") or "",
                    )
                except ValueError:
                    return None
    return None


def _adv_children(adv: DeviceAdvertisement, profile: VersionProfile) -> list[XmlElement]:
    children = [epr_element(QName(profile.addressing, "EndpointReference"), adv.epr, profile)]
    if adv.types:
        text, decls = qname_list_content(adv.types)
        children.append(element(_wsd(profile, "Types"), text=text, ns_decls=decls))
    if adv.scopes:
        children.append(element(_wsd(profile, "Scopes"), text=" ".join(adv.scopes)))
    if adv.xaddrs:
        children.append(element(_wsd(profile, "XAddrs"), text=" ".join(adv.xaddrs)))
    children.append(element(_wsd(profile, "MetadataVersion"), text=str(adv.metadata_version)))
    return children


def _parse_adv(container: XmlElement, profile: VersionProfile) -> DeviceAdvertisement:
    epr = parse_epr(_require(container, QName(profile.addressing, "EndpointReference")))
    types: tuple[QName, ...] = ()
    types_elem = container.find(_wsd(profile, "Types"))
    if types_elem is not None:
        types = parse_qname_list(types_elem.text, ns_scope(container, types_elem))
    scopes_elem = container.find(_wsd(profile, "Scopes"))
    scopes = tuple(scopes_elem.text.split()) if scopes_elem is not None else ()
    xaddrs_elem = container.find(_wsd(profile, "XAddrs"))
    xaddrs = tuple(xaddrs_elem.text.split()) if xaddrs_elem is not None else ()
    version_elem = container.find(_wsd(profile, "MetadataVersion"))
    try:
        metadata_version = int(version_elem.text.strip()) if version_elem is not None else 1
    except ValueError:
        metadata_version = 1
    return DeviceAdvertisement(epr=epr, types=types, scopes=scopes, xaddrs=xaddrs,
                               metadata_version=metadata_version)


def _require(container: XmlElement, name: QName) -> XmlElement:
    child = container.find(name)
    if child is None:
        raise ProtocolError(f"{container.name.local} is missing {name.local}")
    return child


def build_hello(adv: DeviceAdvertisement, seq: AppSequence,
                profile: VersionProfile = DPWS11) -> SoapEnvelope:
    body = element(_wsd(profile, "Hello"), *_adv_children(adv, profile))
    return envelope(profile.action_hello, body, to=profile.discovery_to,
                    extension_headers=(_app_sequence_header(seq, profile),))


def build_bye(epr: EndpointReference, seq: AppSequence,
              profile: VersionProfile = DPWS11) -> SoapEnvelope:
    body = element(_wsd(profile, "Bye"),
                   epr_element(QName(profile.addressing, "EndpointReference"), epr, profile))
    return envelope(profile.action_bye, body, to=profile.discovery_to,
                    extension_headers=(_app_sequence_header(seq, profile),))


def build_probe(filter: ProbeFilter, profile: VersionProfile = DPWS11,
                message_id: str | None = None) -> SoapEnvelope:
    children = []
    if filter.types:
        text, decls = qname_list_content(filter.types)
        children.append(element(_wsd(profile, "Types"), text=text, ns_decls=decls))
    if filter.scopes:
        rule_iri = {
            SCOPE_RULE_RFC3986: profile.scope_rule_rfc3986,
            SCOPE_RULE_STRCMP0: profile.scope_rule_strcmp0,
            SCOPE_RULE_NONE: profile.scope_rule_none,
        }[filter.scope_rule]
        children.append(element(_wsd(profile, "Scopes"), text=" ".join(filter.scopes),
                                attrs=((QName("", "MatchBy"), rule_iri),)))
    body = element(_wsd(profile, "Probe"), *children)
    return envelope(profile.action_probe, body, to=profile.discovery_to,
                    message_id=message_id)


def build_probe_matches(advs: list[DeviceAdvertisement], seq: AppSequence,
                        relates_to: str,
                        profile: VersionProfile = DPWS11) -> SoapEnvelope:
    matches = [element(_wsd(profile, "ProbeMatch"), *_adv_children(adv, profile))
               for adv in advs]
    body = element(_wsd(profile, "ProbeMatches"), *matches)
    return envelope(profile.action_probe_matches, body, to=profile.anonymous,
                    relates_to=relates_to,
                    extension_headers=(_app_sequence_header(seq, profile),))


def build_resolve(epr: EndpointReference, profile: VersionProfile = DPWS11,
                  message_id: str | None = None) -> SoapEnvelope:
    body = element(_wsd(profile, "Resolve"),
                   epr_element(QName(profile.addressing, "EndpointReference"), epr, profile))
    return envelope(profile.action_resolve, body, to=profile.discovery_to,
                    message_id=message_id)


def build_resolve_matches(adv: DeviceAdvertisement | None, seq: AppSequence,
                          relates_to: str,
                          profile: VersionProfile = DPWS11) -> SoapEnvelope:
    children = []
    if adv is not None:
        children.append(element(_wsd(profile, "ResolveMatch"), *_adv_children(adv, profile)))
    body = element(_wsd(profile, "ResolveMatches"), *children)
    return envelope(profile.action_resolve_matches, body, to=profile.anonymous,
                    relates_to=relates_to,
                    extension_headers=(_app_sequence_header(seq, profile),))


def profile_for_action(action: str) -> VersionProfile | None:
    for profile in PROFILES.values():
        if action.startswith(profile.discovery + "/"):
            return profile
    return None


def parse_hello(env: SoapEnvelope) -> tuple[DeviceAdvertisement, AppSequence | None]:
    profile = _discovery_profile(env)
    hello = env.body
    if hello is None or hello.name != _wsd(profile, "Hello"):
        raise ProtocolError("not a Hello body")
    return _parse_adv(hello, profile), parse_app_sequence(env)


def parse_bye(env: SoapEnvelope) -> tuple[EndpointReference, AppSequence | None]:
    profile = _discovery_profile(env)
    bye = env.body
    if bye is None or bye.name != _wsd(profile, "Bye"):
        raise ProtocolError("not a Bye body")
    epr = parse_epr(_require(bye, QName(profile.addressing, "EndpointReference")))
    return epr, parse_app_sequence(env)


def parse_probe(env: SoapEnvelope) -> ProbeFilter:
    profile = _discovery_profile(env)
    probe = env.body
    if probe is None or probe.name != _wsd(profile, "Probe"):
        raise ProtocolError("not a Probe body")
    types: tuple[QName, ...] = ()
    types_elem = probe.find(_wsd(profile, "Types"))
    if types_elem is not None:
        types = parse_qname_list(types_elem.text, ns_scope(probe, types_elem))
    scopes: tuple[str, ...] = ()
    rule = SCOPE_RULE_RFC3986
    scopes_elem = probe.find(_wsd(profile, "Scopes"))
    if scopes_elem is not None:
        scopes = tuple(scopes_elem.text.split())
        rule = _rule_from_iri(scopes_elem.attr("MatchBy"))
    return ProbeFilter(types=types, scopes=scopes, scope_rule=rule)


def _rule_from_iri(iri: str | None) -> str:
    if iri is None:
        return SCOPE_RULE_RFC3986
    for profile in PROFILES.values():
        if iri == profile.scope_rule_rfc3986:
            return SCOPE_RULE_RFC3986
        if iri == profile.scope_rule_strcmp0:
            return SCOPE_RULE_STRCMP0
    # An unsupported rule must not produce accidental matches.
    return SCOPE_RULE_NONE


def parse_probe_matches(env: SoapEnvelope) -> tuple[list[DeviceAdvertisement], AppSequence | None]:
    profile = _discovery_profile(env)
    matches = env.body
    if matches is None or matches.name != _wsd(profile, "ProbeMatches"):
        raise ProtocolError("not a ProbeMatches body")
    advs = [_parse_adv(m, profile) for m in matches.find_all(_wsd(profile, "ProbeMatch"))]
    return advs, parse_app_sequence(env)


def parse_resolve(env: SoapEnvelope) -> EndpointReference:
    profile = _discovery_profile(env)
    resolve = env.body
    if resolve is None or resolve.name != _wsd(profile, "Resolve"):
        raise ProtocolError("not a Resolve body")
    return parse_epr(_require(resolve, QName(profile.addressing, "EndpointReference")))


def parse_resolve_matches(env: SoapEnvelope) -> tuple[DeviceAdvertisement | None, AppSequence | None]:
    profile = _discovery_profile(env)
    matches = env.body
    if matches is None or matches.name != _wsd(profile, "ResolveMatches"):
        raise ProtocolError("not a ResolveMatches body")
    match = matches.find(_wsd(profile, "ResolveMatch"))
    adv = _parse_adv(match, profile) if match is not None else None
    return adv, parse_app_sequence(env)


def _discovery_profile(env: SoapEnvelope) -> VersionProfile:
    profile = profile_for_action(env.action)
    if profile is None:
        raise ProtocolError(f"action {env.action!r} is not a discovery action")
    return profile


# --- responder ---

class _DedupeCache:
    """Message-id LRU with a time window; retransmissions of a request
    must be answered at most once."""

    def __init__(self, window: float = DEDUPE_WINDOW, capacity: int = DEDUPE_CAPACITY,
                 clock=time.monotonic):
        self.window = window
        self.capacity = capacity
        self.clock = clock
        self._seen: OrderedDict[str, float] = OrderedDict()

    def seen_recently(self, message_id: str) -> bool:
        """Record the id; True iff it was already inside the window."""
        now = self.clock()
        while self._seen:
            oldest_id, stamp = next(iter(self._seen.items()))
            if now - stamp > self.window:
                self._seen.popitem(last=False)
            else:
                break
        if message_id in self._seen:
            self._seen.move_to_end(message_id)
            self._seen[message_id] = now
            return True
        self._seen[message_id] = now
        while len(self._seen) > self.capacity:
            self._seen.popitem(last=False)
        return False


class DiscoveryResponder:
    """The device-side discovery runtime.

    Owns the multicast listener, the set of local advertisements and
    the duplicate-suppression cache. All registry and cache access is
    serialized under one lock, which realizes the single-event-loop
    contract: handlers observe a consistent registry view.
    """

    def __init__(
        self,
        endpoint: MulticastEndpoint | None = None,
        profile: VersionProfile = DPWS11,
        sequence_source: AppSequenceSource | None = None,
        retransmit: RetransmitPolicy | None = None,
        rng: random.Random | None = None,
    ):
        self.endpoint = endpoint or MulticastEndpoint()
        self.profile = profile
        self.sequence = sequence_source or process_sequence_source()
        self.retransmit = retransmit or RetransmitPolicy()
        self.rng = rng or random.Random()
        self._listener = UdpListener(self.endpoint, self._on_datagram)
        self._lock = threading.Lock()
        self._registry: dict[str, DeviceAdvertisement] = {}
        self._dedupe = _DedupeCache()
        self._timers: set[threading.Timer] = set()
        self._started = False

    # -- lifecycle --

    def start(self):
        if self._started:
            return
        self._listener.start()
        self._started = True

    def stop(self):
        if not self._started:
            return
        self._started = False
        with self._lock:
            timers = list(self._timers)
            self._timers.clear()
        for timer in timers:
            timer.cancel()
        self._listener.stop()

    # -- announcements --

    def announce_hello(self, adv: DeviceAdvertisement):
        """Register the device and multicast one logical Hello."""
        with self._lock:
            self._registry[adv.epr.address] = adv
        env = build_hello(adv, self.sequence.next(), self.profile)
        self._multicast(env)

    def announce_bye(self, epr: EndpointReference):
        """Deregister first, then multicast Bye, so a probe racing the
        departure cannot resurrect the device."""
        with self._lock:
            known = self._registry.pop(epr.address, None)
        if known is None:
            log.warning("bye for unknown endpoint %s", epr.address)
            return
        env = build_bye(epr, self.sequence.next(), self.profile)
        self._multicast(env)

    def update(self, adv: DeviceAdvertisement):
        """Replace a registered advertisement (metadata version bumps)."""
        with self._lock:
            self._registry[adv.epr.address] = adv

    def _multicast(self, env: SoapEnvelope):
        payload = serialize_envelope(env, self.profile)
        if self.endpoint.ipv4:
            udp_send(payload, (self.endpoint.group_v4, self.endpoint.port),
                     self.retransmit, rng=self.rng)
        if self.endpoint.ipv6:
            udp_send(payload, (self.endpoint.group_v6, self.endpoint.port),
                     self.retransmit, rng=self.rng)

    # -- inbound --

    def _on_datagram(self, payload: bytes, source: tuple):
        try:
            env = parse_envelope(payload, max_size=UDP_MAX_ENVELOPE)
        except (MalformedXml, NotSoap, MissingAction, Oversize) as exc:
            log.debug("dropping datagram from %s: %s", source, exc)
            return
        profile = profile_for_action(env.action)
        if profile is None:
            return
        if env.action == profile.action_probe:
            self._respond_probe(env, source, profile)
        elif env.action == profile.action_resolve:
            self._respond_resolve(env, source, profile)

    def _respond_probe(self, env: SoapEnvelope, source: tuple, profile: VersionProfile):
        try:
            filter = parse_probe(env)
        except ProtocolError as exc:
            log.debug("ignoring malformed probe: %s", exc)
            return
        with self._lock:
            if env.message_id and self._dedupe.seen_recently(env.message_id):
                return
            matched = [adv for adv in self._registry.values()
                       if match_probe(filter, adv)]
        for adv in matched:
            reply = build_probe_matches([adv], self.sequence.next(),
                                        relates_to=env.message_id, profile=profile)
            self._schedule_reply(reply, source, profile,
                                 delay=self.rng.uniform(0.0, PROBE_MATCH_MAX_DELAY))

    def _respond_resolve(self, env: SoapEnvelope, source: tuple, profile: VersionProfile):
        try:
            epr = parse_resolve(env)
        except ProtocolError as exc:
            log.debug("ignoring malformed resolve: %s", exc)
            return
        with self._lock:
            if env.message_id and self._dedupe.seen_recently(env.message_id):
                return
            adv = self._registry.get(epr.address)
        if adv is None:
            return
        reply = build_resolve_matches(adv, self.sequence.next(),
                                      relates_to=env.message_id, profile=profile)
        self._schedule_reply(reply, source, profile, delay=0.0)

    def _schedule_reply(self, reply: SoapEnvelope, source: tuple,
                        profile: VersionProfile, delay: float):
        payload = serialize_envelope(reply, profile)

        def fire():
            with self._lock:
                self._timers.discard(timer)
            if not self._started:
                return
            try:
                self._listener.send(payload, source)
            except (OSError, SocketError) as exc:
                log.warning("discovery reply to %s failed: %s", source, exc)

        timer = threading.Timer(delay, fire)
        timer.daemon = True
        with self._lock:
            self._timers.add(timer)
        timer.start()


# --- searching ---

def probe(
    filter: ProbeFilter | None = None,
    timeout: float = DEFAULT_PROBE_TIMEOUT,
    endpoint: MulticastEndpoint | None = None,
    profile: VersionProfile = DPWS11,
    retransmit: RetransmitPolicy | None = None,
    match_budget: int | None = None,
) -> list[DeviceAdvertisement]:
    """Multicast one Probe and collect matching advertisements.

    Replies are correlated by RelatesTo, deduplicated by endpoint
    address keeping the newest AppSequence, and returned when the
    timeout elapses (or as soon as match_budget distinct devices have
    answered). An empty result is a normal outcome.
    """
    if timeout <= 0:
        raise ValueError("probe timeout must be positive")
    filter = filter or ProbeFilter()
    endpoint = endpoint or MulticastEndpoint()
    request = build_probe(filter, profile)
    payload = serialize_envelope(request, profile)
    return _search(payload, request.message_id, timeout, endpoint, profile,
                   retransmit or RetransmitPolicy(),
                   parse=parse_probe_matches, match_budget=match_budget)


def resolve(
    epr: EndpointReference,
    timeout: float = DEFAULT_PROBE_TIMEOUT,
    endpoint: MulticastEndpoint | None = None,
    profile: VersionProfile = DPWS11,
    retransmit: RetransmitPolicy | None = None,
) -> DeviceAdvertisement | None:
    """Multicast one Resolve for a known endpoint; first match wins."""
    endpoint = endpoint or MulticastEndpoint()
    request = build_resolve(epr, profile)
    payload = serialize_envelope(request, profile)

    def parse(env: SoapEnvelope):
        adv, seq = parse_resolve_matches(env)
        return ([adv] if adv is not None else []), seq

    found = _search(payload, request.message_id, timeout, endpoint, profile,
                    retransmit or RetransmitPolicy(), parse=parse, match_budget=1)
    return found[0] if found else None


def _search(
    payload: bytes,
    message_id: str,
    timeout: float,
    endpoint: MulticastEndpoint,
    profile: VersionProfile,
    retransmit: RetransmitPolicy,
    parse,
    match_budget: int | None,
) -> list[DeviceAdvertisement]:
    channels: list[tuple[socket.socket, tuple]] = []
    if endpoint.ipv4:
        channels.append((transport.open_udp_socket(socket.AF_INET),
                         (endpoint.group_v4, endpoint.port)))
    if endpoint.ipv6:
        channels.append((transport.open_udp_socket(socket.AF_INET6),
                         (endpoint.group_v6, endpoint.port)))
    collected: dict[str, tuple[DeviceAdvertisement, AppSequence | None]] = {}
    selector = selectors.DefaultSelector()
    senders = []
    try:
        for sock, dest in channels:
            sock.setblocking(False)
            selector.register(sock, selectors.EVENT_READ)
            sender = threading.Thread(target=_send_quietly,
                                      args=(payload, dest, retransmit, sock),
                                      daemon=True)
            sender.start()
            senders.append(sender)
        deadline = time.monotonic() + timeout
        done = False
        while not done:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                break
            for key, _events in selector.select(timeout=remaining):
                try:
                    datagram, _source = key.fileobj.recvfrom(transport.RECV_BUFFER)
                except OSError:
                    continue
                if _collect_reply(datagram, message_id, parse, collected):
                    if match_budget is not None and len(collected) >= match_budget:
                        done = True
                        break
        for sender in senders:
            sender.join(timeout=1.0)
    finally:
        selector.close()
        for sock, _dest in channels:
            sock.close()
    return [adv for adv, _ in collected.values()]


def _collect_reply(datagram: bytes, message_id: str, parse, collected: dict) -> bool:
    """Fold one reply datagram into the result set; True if it counted."""
    try:
        env = parse_envelope(datagram, max_size=UDP_MAX_ENVELOPE)
        if env.addressing.relates_to != message_id:
            return False
        advs, seq = parse(env)
    except (MalformedXml, NotSoap, MissingAction, Oversize, ProtocolError):
        return False
    counted = False
    for adv in advs:
        previous = collected.get(adv.epr.address)
        if previous is not None:
            _, old_seq = previous
            if old_seq is not None and (seq is None or not is_newer(seq, old_seq)):
                continue
        collected[adv.epr.address] = (adv, seq)
        counted = True
    return counted


def _send_quietly(payload: bytes, dest: tuple, policy: RetransmitPolicy,
                  sock) -> None:
    try:
        udp_send(payload, dest, policy, sock=sock)
    except (OSError, SocketError, Oversize) as exc:
        log.warning("discovery send to %s failed: %s", dest, exc)
