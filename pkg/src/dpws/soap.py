"""SOAP 1.2 envelope model with WS-Addressing headers.

Every message the stack sends or receives passes through
parse_envelope / serialize_envelope. The model is symmetric: parsing
the serializer's output reconstructs a structurally equal envelope.
"""
from __future__ import annotations

import uuid
from dataclasses import dataclass, field

from . import namespaces as ns
from .errors import InvariantViolation, MissingAction, NotSoap
from .namespaces import SOAP_ENV, VersionProfile, DPWS11
from .xmlcodec import (
    XML_NS,
    QName,
    XmlElement,
    element,
    ns_scope,
    parse_xml,
    serialize_xml,
    structurally_equal,
    with_outer_scope,
)

UDP_MAX_ENVELOPE = 4096
HTTP_MAX_ENVELOPE = 1024 * 1024

ENVELOPE = QName(SOAP_ENV, "Envelope")
HEADER = QName(SOAP_ENV, "Header")
BODY = QName(SOAP_ENV, "Body")
FAULT = QName(SOAP_ENV, "Fault")

# Both addressing vocabularies are recognized on input; output follows
# the caller's version profile.
_ADDRESSING_URIS = (DPWS11.addressing, "http://schemas.xmlsoap.org/ws/2004/08/addressing")


def new_message_id() -> str:
    """Fresh globally-unique message id in urn:uuid form."""
    return f"urn:uuid:{uuid.uuid4()}"


@dataclass(frozen=True)
class EndpointReference:
    """WS-Addressing endpoint: an address IRI plus opaque reference
    parameters that are echoed as headers in messages sent to it."""

    address: str
    reference_parameters: tuple[XmlElement, ...] = ()


@dataclass(frozen=True)
class AddressingHeaders:
    action: str
    message_id: str = field(default_factory=new_message_id)
    to: str = ""
    relates_to: str | None = None
    reply_to: EndpointReference | None = None


@dataclass(frozen=True)
class SoapEnvelope:
    addressing: AddressingHeaders
    body: XmlElement | None = None
    extension_headers: tuple[XmlElement, ...] = ()
    is_fault: bool = False

    @property
    def action(self) -> str:
        return self.addressing.action

    @property
    def message_id(self) -> str:
        return self.addressing.message_id


def envelope(
    action: str,
    body: XmlElement | None = None,
    *,
    to: str = "",
    relates_to: str | None = None,
    reply_to: EndpointReference | None = None,
    extension_headers: tuple[XmlElement, ...] = (),
    message_id: str | None = None,
) -> SoapEnvelope:
    headers = AddressingHeaders(
        action=action,
        message_id=message_id if message_id is not None else new_message_id(),
        to=to,
        relates_to=relates_to,
        reply_to=reply_to,
    )
    return SoapEnvelope(addressing=headers, body=body, extension_headers=extension_headers)


def epr_element(name: QName, epr: EndpointReference, profile: VersionProfile) -> XmlElement:
    children = [element(QName(profile.addressing, "Address"), text=epr.address)]
    if epr.reference_parameters:
        children.append(element(QName(profile.addressing, "ReferenceParameters"),
                                *epr.reference_parameters))
    return element(name, *children)


def parse_epr(elem: XmlElement, profile: VersionProfile | None = None) -> EndpointReference:
    for uri in ((profile.addressing,) if profile else _ADDRESSING_URIS):
        address = elem.find(QName(uri, "Address"))
        if address is not None:
            params = elem.find(QName(uri, "ReferenceParameters"))
            return EndpointReference(
                address=address.text.strip(),
                reference_parameters=params.children if params is not None else (),
            )
    raise InvariantViolation("endpoint reference carries no Address")


def serialize_envelope(env: SoapEnvelope, profile: VersionProfile = DPWS11) -> bytes:
    """Emit the envelope as compact UTF-8 XML. Deterministic: equal
    envelopes serialize to identical bytes."""
    if env.is_fault:
        _check_fault_body(env.body)
    wsa = profile.addressing
    headers: list[XmlElement] = [
        element(QName(wsa, "Action"), text=env.addressing.action),
        element(QName(wsa, "MessageID"), text=env.addressing.message_id),
    ]
    if env.addressing.to:
        headers.append(element(QName(wsa, "To"), text=env.addressing.to))
    if env.addressing.relates_to is not None:
        headers.append(element(QName(wsa, "RelatesTo"), text=env.addressing.relates_to))
    if env.addressing.reply_to is not None:
        headers.append(epr_element(QName(wsa, "ReplyTo"), env.addressing.reply_to, profile))
    headers.extend(env.extension_headers)
    body = element(BODY, env.body) if env.body is not None else element(BODY)
    root = element(ENVELOPE, element(HEADER, *headers), body)
    return serialize_xml(root)


def parse_envelope(data: bytes, *, max_size: int = HTTP_MAX_ENVELOPE) -> SoapEnvelope:
    """Parse a SOAP 1.2 envelope.

    Addressing headers from either supported vocabulary populate the
    typed fields; anything else in the Header lands in
    extension_headers verbatim.
    """
    root = parse_xml(data, max_size=max_size)
    if root.name != ENVELOPE:
        raise NotSoap(f"root element is {root.name}, not a SOAP 1.2 Envelope")
    header = root.find(HEADER)
    body_elem = root.find(BODY)
    # The Envelope/Header/Body wrappers are dropped below, so namespace
    # declarations sitting on them are folded into the retained subtrees.
    header_decls = (root.ns_decls, header.ns_decls if header is not None else ())
    body_decls = (root.ns_decls, body_elem.ns_decls if body_elem is not None else ())

    action = None
    message_id = ""
    to = ""
    relates_to = None
    reply_to = None
    extensions: list[XmlElement] = []
    if header is not None:
        for child in header.children:
            known = False
            for uri in _ADDRESSING_URIS:
                if child.name == QName(uri, "Action"):
                    action = child.text.strip()
                    known = True
                elif child.name == QName(uri, "MessageID"):
                    message_id = child.text.strip()
                    known = True
                elif child.name == QName(uri, "To"):
                    to = child.text.strip()
                    known = True
                elif child.name == QName(uri, "RelatesTo"):
                    relates_to = child.text.strip()
                    known = True
                elif child.name == QName(uri, "ReplyTo"):
                    reply_to = parse_epr(child)
                    known = True
                if known:
                    break
            if not known:
                extensions.append(with_outer_scope(child, *header_decls))
    if not action:
        raise MissingAction("envelope carries no Action header")

    body = body_elem.children[0] if body_elem is not None and body_elem.children else None
    if body is not None:
        body = with_outer_scope(body, *body_decls)
    return SoapEnvelope(
        addressing=AddressingHeaders(action=action, message_id=message_id, to=to,
                                     relates_to=relates_to, reply_to=reply_to),
        body=body,
        extension_headers=tuple(extensions),
        is_fault=body is not None and body.name == FAULT,
    )


def envelopes_equal(a: SoapEnvelope, b: SoapEnvelope) -> bool:
    if a.addressing != b.addressing or a.is_fault != b.is_fault:
        return False
    if len(a.extension_headers) != len(b.extension_headers):
        return False
    if not all(structurally_equal(x, y) for x, y in zip(a.extension_headers, b.extension_headers)):
        return False
    if (a.body is None) != (b.body is None):
        return False
    return a.body is None or structurally_equal(a.body, b.body)


# --- faults ---

FAULT_SENDER = "Sender"
FAULT_RECEIVER = "Receiver"


@dataclass(frozen=True)
class FaultInfo:
    code: str
    reason: str
    subcode: QName | None = None


def fault_envelope(
    code: str,
    reason: str,
    *,
    relates_to: str | None = None,
    subcode: QName | None = None,
    profile: VersionProfile = DPWS11,
) -> SoapEnvelope:
    if code not in (FAULT_SENDER, FAULT_RECEIVER):
        raise InvariantViolation(f"fault code must be Sender or Receiver, got {code!r}")
    if not reason:
        raise InvariantViolation("fault reason must be non-empty")
    code_children = [element(QName(SOAP_ENV, "Value"), text=f"q0:{code}",
                             ns_decls=(("q0", SOAP_ENV),))]
    if subcode is not None:
        code_children.append(element(
            QName(SOAP_ENV, "Subcode"),
            element(QName(SOAP_ENV, "Value"), text=f"q0:{subcode.local}",
                    ns_decls=(("q0", subcode.namespace),)),
        ))
    fault = element(
        FAULT,
        element(QName(SOAP_ENV, "Code"), *code_children),
        element(QName(SOAP_ENV, "Reason"),
                element(QName(SOAP_ENV, "Text"), text=reason,
                        attrs=((QName(XML_NS, "lang"), "en"),))),
    )
    return SoapEnvelope(
        addressing=AddressingHeaders(action=profile.action_fault, relates_to=relates_to,
                                     to=profile.anonymous),
        body=fault,
        is_fault=True,
    )


def _resolve_token(token: str, scope: dict[str, str]) -> QName | None:
    """Resolve one prefixed token to a QName; unbound prefixes degrade to
    a no-namespace QName rather than failing the whole fault."""
    token = token.strip()
    if not token:
        return None
    prefix, sep, local = token.rpartition(":")
    if not local:
        return None
    if sep and prefix in scope:
        return QName(scope[prefix], local)
    return QName("", local)


def fault_info(env: SoapEnvelope) -> FaultInfo:
    """Extract code/reason/subcode from a fault envelope."""
    if not env.is_fault or env.body is None:
        raise InvariantViolation("envelope is not a fault")
    fault = env.body
    code_elem = fault.find(QName(SOAP_ENV, "Code"))
    reason_elem = fault.find(QName(SOAP_ENV, "Reason"))
    code = ""
    subcode = None
    if code_elem is not None:
        value = code_elem.find(QName(SOAP_ENV, "Value"))
        if value is not None:
            resolved = _resolve_token(value.text, ns_scope(fault, code_elem, value))
            code = resolved.local if resolved is not None else ""
        sub = code_elem.find(QName(SOAP_ENV, "Subcode"))
        if sub is not None:
            sub_value = sub.find(QName(SOAP_ENV, "Value"))
            if sub_value is not None:
                subcode = _resolve_token(
                    sub_value.text, ns_scope(fault, code_elem, sub, sub_value))
    reason = ""
    if reason_elem is not None:
        text = reason_elem.find(QName(SOAP_ENV, "Text"))
        if text is not None:
            reason = text.text.strip()
    return FaultInfo(code=code, reason=reason, subcode=subcode)


def _check_fault_body(body: XmlElement | None):
    if body is None or body.name != FAULT:
        raise InvariantViolation("fault flag set but body is not a Fault element")
    info_ok = False
    code_elem = body.find(QName(SOAP_ENV, "Code"))
    reason_elem = body.find(QName(SOAP_ENV, "Reason"))
    if code_elem is not None and reason_elem is not None:
        value = code_elem.find(QName(SOAP_ENV, "Value"))
        text = reason_elem.find(QName(SOAP_ENV, "Text"))
        info_ok = value is not None and bool(value.text.strip()) \
            and text is not None and bool(text.text.strip())
    if not info_ok:
        raise InvariantViolation("fault body must carry a non-empty code and reason")
