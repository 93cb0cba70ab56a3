"""Namespace and action URI sets for the two supported protocol versions.

A VersionProfile maps the abstract message vocabulary onto concrete
URIs; 1.1 (2009 OASIS URIs) is the default and 1.0 (2006 xmlsoap URIs)
is selectable per device/client. Both use the same message layout --
only the URI sets differ.
"""
from __future__ import annotations

from dataclasses import dataclass

from .xmlcodec import QName

SOAP_ENV = "http://www.w3.org/2003/05/soap-envelope"

WSE = "http://schemas.xmlsoap.org/ws/2004/08/eventing"
WXF = "http://schemas.xmlsoap.org/ws/2004/09/transfer"
MEX = "http://schemas.xmlsoap.org/ws/2004/09/mex"

# Artifact-local vocabulary: compact service descriptions and the
# notification sequence-number header.
SERVICE_DESCRIPTION_NS = "urn:x-dpws:description:1"
EVENTING_EXT_NS = "urn:x-dpws:eventing:1"


@dataclass(frozen=True)
class VersionProfile:
    name: str
    addressing: str
    anonymous: str
    discovery: str
    discovery_to: str
    dpws: str

    @property
    def action_hello(self) -> str:
        return f"{self.discovery}/Hello"

    @property
    def action_bye(self) -> str:
        return f"{self.discovery}/Bye"

    @property
    def action_probe(self) -> str:
        return f"{self.discovery}/Probe"

    @property
    def action_probe_matches(self) -> str:
        return f"{self.discovery}/ProbeMatches"

    @property
    def action_resolve(self) -> str:
        return f"{self.discovery}/Resolve"

    @property
    def action_resolve_matches(self) -> str:
        return f"{self.discovery}/ResolveMatches"

    @property
    def action_fault(self) -> str:
        return f"{self.addressing}/fault"

    @property
    def device_type(self) -> QName:
        return QName(self.dpws, "Device")

    @property
    def scope_rule_rfc3986(self) -> str:
        return f"{self.discovery}/rfc3986"

    @property
    def scope_rule_strcmp0(self) -> str:
        return f"{self.discovery}/strcmp0"

    @property
    def scope_rule_none(self) -> str:
        return f"{self.discovery}/none"

    @property
    def action_filter_dialect(self) -> str:
        return f"{self.dpws}/Action"


DPWS11 = VersionProfile(
    name="1.1",
    addressing="http://www.w3.org/2005/08/addressing",
    anonymous="http://www.w3.org/2005/08/addressing/anonymous",
    discovery="http://docs.oasis-open.org/ws-dd/ns/discovery/2009/01",
    discovery_to="urn:docs-oasis-open-org:ws-dd:ns:discovery:2009:01",
    dpws="http://docs.oasis-open.org/ws-dd/ns/dpws/2009/01",
)

DPWS10 = VersionProfile(
    name="1.0",
    addressing="http://schemas.xmlsoap.org/ws/2004/08/addressing",
    anonymous="http://schemas.xmlsoap.org/ws/2004/08/addressing/role/anonymous",
    discovery="http://schemas.xmlsoap.org/ws/2005/04/discovery",
    discovery_to="urn:schemas-xmlsoap-org:ws:2005:04:discovery",
    dpws="http://schemas.xmlsoap.org/ws/2006/02/devprof",
)

PROFILES = {"1.1": DPWS11, "1.0": DPWS10}

# Transfer / eventing actions are version-independent in both profiles.
ACTION_GET = f"{WXF}/Get"
ACTION_GET_RESPONSE = f"{WXF}/GetResponse"
ACTION_SUBSCRIBE = f"{WSE}/Subscribe"
ACTION_SUBSCRIBE_RESPONSE = f"{WSE}/SubscribeResponse"
ACTION_RENEW = f"{WSE}/Renew"
ACTION_RENEW_RESPONSE = f"{WSE}/RenewResponse"
ACTION_GET_STATUS = f"{WSE}/GetStatus"
ACTION_GET_STATUS_RESPONSE = f"{WSE}/GetStatusResponse"
ACTION_UNSUBSCRIBE = f"{WSE}/Unsubscribe"
ACTION_UNSUBSCRIBE_RESPONSE = f"{WSE}/UnsubscribeResponse"
ACTION_SUBSCRIPTION_END = f"{WSE}/SubscriptionEnd"
DELIVERY_MODE_PUSH = f"{WSE}/DeliveryModes/Push"


def profile_for(name: str) -> VersionProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown version profile {name!r}, expected one of {sorted(PROFILES)}")
