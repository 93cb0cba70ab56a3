"""Embeddable device/client stack for web-services-on-devices profiles.

Device side: declare a device and its typed services, start it, and the
runtime handles discovery announcements, metadata exchange, operation
dispatch and event subscriptions. Client side: discover devices on the
local network, open their metadata and invoke typed operations.
"""
from .client import ClientNotification, ClientSubscription, DpwsClient, \
    RemoteDevice, RemoteService
from .device import Device, DeviceConfig, EventSourceDefinition, \
    OperationDefinition, ServiceDefinition, create_device
from .errors import DpwsError
from .metadata import ThisDevice, ThisModel
from .namespaces import DPWS10, DPWS11
from .xmlcodec import QName

__all__ = [
    "ClientNotification",
    "ClientSubscription",
    "Device",
    "DeviceConfig",
    "DpwsClient",
    "DpwsError",
    "DPWS10",
    "DPWS11",
    "EventSourceDefinition",
    "OperationDefinition",
    "QName",
    "RemoteDevice",
    "RemoteService",
    "ServiceDefinition",
    "ThisDevice",
    "ThisModel",
    "create_device",
]

__version__ = "0.1.0"
