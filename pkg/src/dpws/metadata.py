"""Device metadata exchange and compact service descriptions.

One Get round-trip on the device endpoint returns three sections --
ThisModel (manufacturer data), ThisDevice (instance data) and
Relationship (hosting structure). Each hosted entry embeds a compact
machine-readable service description (operation names, action IRIs and
typed input/output elements) that clients use for typed invocation; the
dialect deliberately replaces WSDL, which is out of scope.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from . import primitives
from .errors import (
    FaultReceived,
    InvalidConfig,
    MalformedMetadata,
    ProtocolError,
)
from .namespaces import (
    ACTION_GET,
    ACTION_GET_RESPONSE,
    DPWS11,
    MEX,
    SERVICE_DESCRIPTION_NS,
    VersionProfile,
)
from .soap import (
    EndpointReference,
    SoapEnvelope,
    envelope,
    epr_element,
    fault_envelope,
    fault_info,
    parse_envelope,
    parse_epr,
    serialize_envelope,
)
from .transport import http_post
from .xmlcodec import (
    QName,
    XmlElement,
    element,
    ns_scope,
    parse_qname_list,
    qname_list_content,
)

_ABSOLUTE_IRI = re.compile(r"^[A-Za-z][A-Za-z0-9+.-]*:")


def _require_absolute(url: str, where: str):
    if url and not _ABSOLUTE_IRI.match(url):
        raise InvalidConfig(f"{where} must be an absolute IRI, got {url!r}")


@dataclass(frozen=True)
class ThisModel:
    """Manufacturer-scoped facts, shared by every unit of a model."""

    manufacturer: str
    model_name: str
    model_number: str = ""
    model_url: str = ""
    presentation_url: str = ""

    def __post_init__(self):
        if not self.manufacturer:
            raise InvalidConfig("this_model.manufacturer must be non-empty")
        if not self.model_name:
            raise InvalidConfig("this_model.model_name must be non-empty")
        _require_absolute(self.model_url, "this_model.model_url")
        _require_absolute(self.presentation_url, "this_model.presentation_url")


@dataclass(frozen=True)
class ThisDevice:
    """Facts about one physical unit."""

    friendly_name: str
    firmware_version: str = ""
    serial_number: str = ""

    def __post_init__(self):
        if not self.friendly_name:
            raise InvalidConfig("this_device.friendly_name must be non-empty")


@dataclass(frozen=True)
class HostedService:
    """One functional unit attached to the device."""

    epr: EndpointReference
    types: tuple[QName, ...]
    service_id: str
    description: "ServiceDescription | None" = None


@dataclass(frozen=True)
class Relationship:
    """Hosting service plus the hosted services it anchors."""

    host: EndpointReference
    host_types: tuple[QName, ...] = ()
    hosted: tuple[HostedService, ...] = ()

    def __post_init__(self):
        ids = [entry.service_id for entry in self.hosted]
        if len(ids) != len(set(ids)):
            raise InvalidConfig("hosted service ids must be unique within a device")


@dataclass(frozen=True)
class DeviceMetadata:
    this_model: ThisModel
    this_device: ThisDevice
    relationship: Relationship
    metadata_version: int = 1


# --- compact service descriptions ---

@dataclass(frozen=True)
class OperationDescription:
    """Client-visible shape of one operation: names and type bindings."""

    name: str
    input: str | None = None
    output: str | None = None


@dataclass(frozen=True)
class EventDescription:
    name: str
    payload: str


@dataclass(frozen=True)
class ServiceDescription:
    """The typed surface of a hosted service.

    types maps element names to primitive type names; operations and
    events reference those names. The action IRI for every operation and
    event follows one convention: <port type namespace>/<port type
    local>/<name>, with "Response" appended for replies.
    """

    service_id: str
    port_type: QName
    types: tuple[tuple[str, str], ...] = ()
    operations: tuple[OperationDescription, ...] = ()
    events: tuple[EventDescription, ...] = ()

    def primitive_of(self, type_name: str) -> str | None:
        for name, primitive in self.types:
            if name == type_name:
                return primitive
        return None

    def operation(self, name: str) -> OperationDescription | None:
        for op in self.operations:
            if op.name == name:
                return op
        return None

    def event(self, name: str) -> EventDescription | None:
        for ev in self.events:
            if ev.name == name:
                return ev
        return None

    def action_for(self, name: str) -> str:
        return operation_action(self.port_type, name)


def operation_action(port_type: QName, operation_name: str) -> str:
    """Request action IRI: namespace / port type local / operation."""
    return f"{port_type.namespace}/{port_type.local}/{operation_name}"


def response_action(port_type: QName, operation_name: str) -> str:
    return operation_action(port_type, operation_name) + "Response"


_SD = SERVICE_DESCRIPTION_NS


def describe_service(desc: ServiceDescription) -> XmlElement:
    """Serialize a service description to its wire element. The output
    parses back to an equal description (parse_service_description)."""
    port_text, port_decls = qname_list_content((desc.port_type,))
    children = [element(QName(_SD, "PortType"), text=port_text, ns_decls=port_decls)]
    if desc.types:
        children.append(element(QName(_SD, "Types"), *[
            element(QName(_SD, "Type"),
                    attrs=((QName("", "Name"), name), (QName("", "Primitive"), prim)))
            for name, prim in desc.types]))
    if desc.operations:
        ops = []
        for op in desc.operations:
            attrs = [(QName("", "Name"), op.name)]
            if op.input is not None:
                attrs.append((QName("", "Input"), op.input))
            if op.output is not None:
                attrs.append((QName("", "Output"), op.output))
            ops.append(element(QName(_SD, "Operation"), attrs=tuple(attrs)))
        children.append(element(QName(_SD, "Operations"), *ops))
    if desc.events:
        children.append(element(QName(_SD, "Events"), *[
            element(QName(_SD, "Event"),
                    attrs=((QName("", "Name"), ev.name), (QName("", "Payload"), ev.payload)))
            for ev in desc.events]))
    return element(QName(_SD, "Service"), *children,
                   attrs=((QName("", "Id"), desc.service_id),))


def parse_service_description(elem: XmlElement,
                              outer_scope: tuple[XmlElement, ...] = ()) -> ServiceDescription:
    if elem.name != QName(_SD, "Service"):
        raise MalformedMetadata(f"expected service description, got {elem.name}")
    service_id = elem.attr("Id") or ""
    if not service_id:
        raise MalformedMetadata("service description is missing its Id")
    port_elem = elem.find(QName(_SD, "PortType"))
    if port_elem is None:
        raise MalformedMetadata(f"service {service_id!r} description has no PortType")
    ports = parse_qname_list(port_elem.text, ns_scope(*outer_scope, elem, port_elem))
    if len(ports) != 1:
        raise MalformedMetadata(f"service {service_id!r} must name exactly one port type")
    types = []
    types_elem = elem.find(QName(_SD, "Types"))
    if types_elem is not None:
        for entry in types_elem.find_all(QName(_SD, "Type")):
            name, prim = entry.attr("Name") or "", entry.attr("Primitive") or ""
            if not name or not primitives.is_primitive(prim):
                raise MalformedMetadata(
                    f"service {service_id!r} has a bad type entry ({name!r}: {prim!r})")
            types.append((name, prim))
    operations = []
    ops_elem = elem.find(QName(_SD, "Operations"))
    if ops_elem is not None:
        for entry in ops_elem.find_all(QName(_SD, "Operation")):
            name = entry.attr("Name") or ""
            if not name:
                raise MalformedMetadata(f"service {service_id!r} has an unnamed operation")
            operations.append(OperationDescription(
                name=name, input=entry.attr("Input"), output=entry.attr("Output")))
    events = []
    events_elem = elem.find(QName(_SD, "Events"))
    if events_elem is not None:
        for entry in events_elem.find_all(QName(_SD, "Event")):
            name, payload = entry.attr("Name") or "", entry.attr("Payload") or ""
            if not name or not payload:
                raise MalformedMetadata(f"service {service_id!r} has a bad event entry")
            events.append(EventDescription(name=name, payload=payload))
    return ServiceDescription(service_id=service_id, port_type=ports[0],
                              types=tuple(types), operations=tuple(operations),
                              events=tuple(events))


# --- metadata exchange wire codec ---

def _dialect(profile: VersionProfile, section: str) -> str:
    return f"{profile.dpws}/{section}"


def _dpws(profile: VersionProfile, local: str) -> QName:
    return QName(profile.dpws, local)


def _section(profile: VersionProfile, dialect: str, content: XmlElement) -> XmlElement:
    return element(QName(MEX, "MetadataSection"), content,
                   attrs=((QName("", "Dialect"), dialect),))


def _text_child(parent_ns: str, local: str, text: str) -> XmlElement:
    return element(QName(parent_ns, local), text=text)


def build_metadata_body(meta: DeviceMetadata, profile: VersionProfile = DPWS11) -> XmlElement:
    model = meta.this_model
    model_children = [
        _text_child(profile.dpws, "Manufacturer", model.manufacturer),
        _text_child(profile.dpws, "ModelName", model.model_name),
    ]
    if model.model_number:
        model_children.append(_text_child(profile.dpws, "ModelNumber", model.model_number))
    if model.model_url:
        model_children.append(_text_child(profile.dpws, "ModelUrl", model.model_url))
    if model.presentation_url:
        model_children.append(
            _text_child(profile.dpws, "PresentationUrl", model.presentation_url))

    device = meta.this_device
    device_children = [_text_child(profile.dpws, "FriendlyName", device.friendly_name)]
    if device.firmware_version:
        device_children.append(
            _text_child(profile.dpws, "FirmwareVersion", device.firmware_version))
    if device.serial_number:
        device_children.append(
            _text_child(profile.dpws, "SerialNumber", device.serial_number))

    rel = meta.relationship
    host_children = [epr_element(QName(profile.addressing, "EndpointReference"),
                                 rel.host, profile)]
    if rel.host_types:
        text, decls = qname_list_content(rel.host_types)
        host_children.append(element(_dpws(profile, "Types"), text=text, ns_decls=decls))
    rel_children = [element(_dpws(profile, "Host"), *host_children)]
    for entry in rel.hosted:
        hosted_children = [epr_element(QName(profile.addressing, "EndpointReference"),
                                       entry.epr, profile)]
        if entry.types:
            text, decls = qname_list_content(entry.types)
            hosted_children.append(element(_dpws(profile, "Types"),
                                           text=text, ns_decls=decls))
        hosted_children.append(_text_child(profile.dpws, "ServiceId", entry.service_id))
        if entry.description is not None:
            hosted_children.append(describe_service(entry.description))
        rel_children.append(element(_dpws(profile, "Hosted"), *hosted_children))

    return element(
        QName(MEX, "Metadata"),
        _section(profile, _dialect(profile, "ThisModel"),
                 element(_dpws(profile, "ThisModel"), *model_children)),
        _section(profile, _dialect(profile, "ThisDevice"),
                 element(_dpws(profile, "ThisDevice"), *device_children)),
        _section(profile, _dialect(profile, "Relationship"),
                 element(_dpws(profile, "Relationship"), *rel_children,
                         attrs=((QName("", "Type"), _dialect(profile, "host")),))),
    )


def build_get_request(to: str, profile: VersionProfile = DPWS11) -> SoapEnvelope:
    return envelope(ACTION_GET, None, to=to)


def build_metadata_response(request: SoapEnvelope, meta: DeviceMetadata,
                            profile: VersionProfile = DPWS11) -> SoapEnvelope:
    """Answer a transfer Get; any other action gets a sender fault."""
    if request.action != ACTION_GET:
        return fault_envelope(
            "Sender", f"action {request.action!r} is not supported here",
            relates_to=request.message_id,
            subcode=QName(profile.addressing, "ActionNotSupported"),
            profile=profile)
    return envelope(ACTION_GET_RESPONSE, build_metadata_body(meta, profile),
                    relates_to=request.message_id, to=profile.anonymous,
                    extension_headers=(metadata_version_header(meta.metadata_version),))


def _find_section(metadata_elem: XmlElement, profile: VersionProfile,
                  section: str) -> XmlElement | None:
    dialect = _dialect(profile, section)
    for candidate in metadata_elem.find_all(QName(MEX, "MetadataSection")):
        if candidate.attr("Dialect") == dialect and candidate.children:
            return candidate.children[0]
    return None


def _text_of(container: XmlElement, name: QName) -> str:
    child = container.find(name)
    return child.text.strip() if child is not None else ""


def parse_metadata(env: SoapEnvelope, profile: VersionProfile = DPWS11) -> DeviceMetadata:
    """Extract DeviceMetadata from a GetResponse envelope. All three
    sections are required; anything less is MalformedMetadata."""
    body = env.body
    if body is None or body.name != QName(MEX, "Metadata"):
        raise MalformedMetadata("response body is not a Metadata element")

    model_elem = _find_section(body, profile, "ThisModel")
    if model_elem is None:
        raise MalformedMetadata("metadata is missing the ThisModel section")
    device_elem = _find_section(body, profile, "ThisDevice")
    if device_elem is None:
        raise MalformedMetadata("metadata is missing the ThisDevice section")
    rel_elem = _find_section(body, profile, "Relationship")
    if rel_elem is None:
        raise MalformedMetadata("metadata is missing the Relationship section")

    try:
        this_model = ThisModel(
            manufacturer=_text_of(model_elem, _dpws(profile, "Manufacturer")),
            model_name=_text_of(model_elem, _dpws(profile, "ModelName")),
            model_number=_text_of(model_elem, _dpws(profile, "ModelNumber")),
            model_url=_text_of(model_elem, _dpws(profile, "ModelUrl")),
            presentation_url=_text_of(model_elem, _dpws(profile, "PresentationUrl")),
        )
        this_device = ThisDevice(
            friendly_name=_text_of(device_elem, _dpws(profile, "FriendlyName")),
            firmware_version=_text_of(device_elem, _dpws(profile, "FirmwareVersion")),
            serial_number=_text_of(device_elem, _dpws(profile, "SerialNumber")),
        )
    except InvalidConfig as exc:
        raise MalformedMetadata(str(exc)) from exc

    host_elem = rel_elem.find(_dpws(profile, "Host"))
    if host_elem is None:
        raise MalformedMetadata("Relationship section has no Host entry")
    try:
        host = parse_epr(host_elem.find(QName(profile.addressing, "EndpointReference"))
                         or host_elem)
    except Exception as exc:
        raise MalformedMetadata(f"Host entry has no endpoint reference: {exc}") from exc
    host_types: tuple[QName, ...] = ()
    host_types_elem = host_elem.find(_dpws(profile, "Types"))
    if host_types_elem is not None:
        host_types = parse_qname_list(host_types_elem.text,
                                      ns_scope(body, rel_elem, host_elem, host_types_elem))

    hosted_entries = []
    for hosted_elem in rel_elem.find_all(_dpws(profile, "Hosted")):
        epr_elem = hosted_elem.find(QName(profile.addressing, "EndpointReference"))
        if epr_elem is None:
            raise MalformedMetadata("Hosted entry has no endpoint reference")
        types: tuple[QName, ...] = ()
        types_elem = hosted_elem.find(_dpws(profile, "Types"))
        if types_elem is not None:
            types = parse_qname_list(types_elem.text,
                                     ns_scope(body, rel_elem, hosted_elem, types_elem))
        service_id = _text_of(hosted_elem, _dpws(profile, "ServiceId"))
        desc_elem = hosted_elem.find(QName(_SD, "Service"))
        description = None
        if desc_elem is not None:
            description = parse_service_description(
                desc_elem, outer_scope=(body, rel_elem, hosted_elem))
        hosted_entries.append(HostedService(
            epr=parse_epr(epr_elem), types=types,
            service_id=service_id, description=description))

    try:
        relationship = Relationship(host=host, host_types=host_types,
                                    hosted=tuple(hosted_entries))
    except InvalidConfig as exc:
        raise MalformedMetadata(str(exc)) from exc
    return DeviceMetadata(this_model=this_model, this_device=this_device,
                          relationship=relationship,
                          metadata_version=_metadata_version_of(env))


def _metadata_version_of(env: SoapEnvelope) -> int:
    for header in env.extension_headers:
        if header.name == QName(_SD, "MetadataVersion"):
            try:
                return int(header.text.strip())
            except ValueError:
                return 1
    return 1


def metadata_version_header(version: int) -> XmlElement:
    """Header mirroring the discovery-advertised metadata version, so a
    metadata response is self-describing about its currency."""
    return element(QName(_SD, "MetadataVersion"), text=str(version))


def get_metadata(xaddr: str, timeout: float = 10.0,
                 profile: VersionProfile = DPWS11) -> DeviceMetadata:
    """Fetch and parse a device's metadata from one of its xaddrs."""
    request = build_get_request(to=xaddr, profile=profile)
    exchange = http_post(xaddr, serialize_envelope(request, profile), timeout=timeout)
    try:
        response = parse_envelope(exchange.body)
    except Exception as exc:
        raise MalformedMetadata(f"metadata response unreadable: {exc}") from exc
    if response.is_fault:
        info = fault_info(response)
        raise FaultReceived(info.code, info.reason, info.subcode)
    if response.action != ACTION_GET_RESPONSE:
        raise ProtocolError(
            f"expected GetResponse, got action {response.action!r}")
    return parse_metadata(response, profile)
