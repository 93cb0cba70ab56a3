"""Declarative device configuration.

A YAML document with two sections: `device` mirrors DeviceConfig and
`services` lists service definitions whose operations bind builtin
behaviors instead of code:

    device:
      address: f7ef0fab-ba1d-4275-9a94-0f051090640f
      friendly_name: Thermometer
      manufacturer: ACME
      model_name: TH-1
      port: 8080
      types: ["{urn:example:sensors}TemperatureSensor"]
    services:
      - id: thermometer
        types: {temperature: int}
        operations:
          - name: GetTemperature
            output: temperature
            behavior: constant(0)
        events:
          - name: TemperatureChanged
            payload: temperature

Behaviors: constant(VALUE), counter, echo, random(MIN,MAX) and
hook(MODULE:CALLABLE), whose named callable is used as the handler.
Every diagnostic is anchored to the file, line and column it came
from. An event may declare `every: SECONDS` plus a behavior to have
the host emit it periodically.
"""
from __future__ import annotations

import importlib
import random
import re
import threading
from dataclasses import dataclass

import yaml

from ..device import (
    DeviceConfig,
    EventSourceDefinition,
    OperationDefinition,
    ServiceDefinition,
)
from ..errors import InvalidConfig
from ..metadata import ThisDevice, ThisModel
from ..primitives import PRIMITIVES
from ..xmlcodec import QName

_BEHAVIOR = re.compile(r"^([a-z_]+)\s*(?:\((.*)\))?$", re.DOTALL)


class ConfigError(InvalidConfig):
    """A configuration diagnostic carrying its file location."""

    def __init__(self, filename: str, node, message: str):
        mark = getattr(node, "start_mark", None)
        if mark is not None:
            where = f"{filename}:{mark.line + 1}:{mark.column + 1}"
        else:
            where = filename
        super().__init__(f"{where}: {message}")


# --- YAML access with location tracking ---

def _scalar_value(node):
    """Construct one scalar with the standard YAML resolution rules."""
    loader = yaml.SafeLoader("")
    tag = loader.resolve(yaml.ScalarNode, node.value, (True, False))
    resolved = yaml.ScalarNode(tag, node.value, node.start_mark, node.end_mark)
    if tag == "tag:yaml.org,2002:str":
        return node.value
    return loader.construct_object(resolved)


class _Mapping:
    """A YAML mapping node with anchored lookups."""

    def __init__(self, filename: str, node, label: str):
        if not isinstance(node, yaml.MappingNode):
            raise ConfigError(filename, node, f"{label} must be a mapping")
        self.filename = filename
        self.node = node
        self.label = label
        self.entries = {}
        for key_node, value_node in node.value:
            if not isinstance(key_node, yaml.ScalarNode):
                raise ConfigError(filename, key_node,
                                  f"{label} keys must be plain names")
            if key_node.value in self.entries:
                raise ConfigError(filename, key_node,
                                  f"duplicate key {key_node.value!r} in {label}")
            self.entries[key_node.value] = value_node

    def error(self, node, message: str) -> ConfigError:
        return ConfigError(self.filename, node, message)

    def reject_unknown(self, known: tuple[str, ...]):
        for key, value_node in self.entries.items():
            if key not in known:
                raise self.error(value_node,
                                 f"unknown key {key!r} in {self.label} "
                                 f"(expected one of: {', '.join(known)})")

    def scalar(self, key: str, default=None, required: bool = False):
        node = self.entries.get(key)
        if node is None:
            if required:
                raise self.error(self.node,
                                 f"{self.label} is missing required key {key!r}")
            return default
        if not isinstance(node, yaml.ScalarNode):
            raise self.error(node, f"{self.label}.{key} must be a scalar")
        return _scalar_value(node)

    def string(self, key: str, default=None, required: bool = False):
        value = self.scalar(key, default=default, required=required)
        if value is None:
            return default
        if not isinstance(value, str):
            value = str(value)
        return value

    def sequence(self, key: str) -> list:
        node = self.entries.get(key)
        if node is None:
            return []
        if not isinstance(node, yaml.SequenceNode):
            raise self.error(node, f"{self.label}.{key} must be a list")
        return node.value

    def mapping(self, key: str, label: str) -> "_Mapping | None":
        node = self.entries.get(key)
        if node is None:
            return None
        return _Mapping(self.filename, node, label)

    def node_for(self, key: str):
        return self.entries.get(key, self.node)


# --- behaviors ---

def _parse_behavior_args(text: str) -> list[str]:
    if not text.strip():
        return []
    return [part.strip() for part in text.split(",")]


def _coerce_literal(text: str, primitive: str, fail):
    """Interpret a behavior argument per the operation's type."""
    try:
        if primitive == "int":
            return int(text, 10)
        if primitive == "float":
            return float(text)
        if primitive == "bool":
            if text in ("true", "True"):
                return True
            if text in ("false", "False"):
                return False
            raise ValueError(text)
        return text
    except ValueError:
        raise fail(f"value {text!r} is not a valid {primitive}") from None


def make_behavior(spec: str, input_type: str | None, output_type: str | None,
                  fail) -> object:
    """Turn a behavior binding into a handler(input, cb).

    input_type and output_type are primitive names (int, float, bool,
    string) or None; fail(message) builds the anchored error.
    """
    match = _BEHAVIOR.match(spec.strip())
    if match is None:
        raise fail(f"unparseable behavior {spec!r}")
    name, argtext = match.group(1), match.group(2)
    args = _parse_behavior_args(argtext) if argtext is not None else None

    if name == "constant":
        if output_type is None:
            raise fail("behavior constant requires the operation to "
                       "declare an output")
        if args is None or len(args) != 1:
            raise fail("behavior constant takes exactly one value, "
                       "e.g. constant(0)")
        value = _coerce_literal(args[0], output_type, fail)
        return lambda _input, cb: cb(None, value)

    if name == "counter":
        if output_type != "int":
            raise fail("behavior counter requires an int output")
        if args:
            raise fail("behavior counter takes no arguments")
        lock = threading.Lock()
        state = [0]

        def counter_handler(_input, cb):
            with lock:
                state[0] += 1
                value = state[0]
            cb(None, value)

        return counter_handler

    if name == "echo":
        if input_type is None or output_type is None:
            raise fail("behavior echo requires both input and output")
        if input_type != output_type:
            raise fail(f"behavior echo requires matching types, got "
                       f"{input_type!r} -> {output_type!r}")
        if args:
            raise fail("behavior echo takes no arguments")
        return lambda value, cb: cb(None, value)

    if name == "random":
        if output_type not in ("int", "float"):
            raise fail("behavior random requires an int or float output")
        if args is None or len(args) != 2:
            raise fail("behavior random takes two bounds, e.g. random(1,100)")
        low = _coerce_literal(args[0], output_type, fail)
        high = _coerce_literal(args[1], output_type, fail)
        if low > high:
            raise fail(f"random bounds out of order: {low!r} > {high!r}")
        rng = random.Random()
        if output_type == "int":
            return lambda _input, cb: cb(None, rng.randint(low, high))
        return lambda _input, cb: cb(None, rng.uniform(low, high))

    if name == "hook":
        if args is None or len(args) != 1 or ":" not in args[0]:
            raise fail("behavior hook names a callable as MODULE:NAME")
        module_name, _, attr = args[0].partition(":")
        try:
            module = importlib.import_module(module_name)
        except ImportError as exc:
            raise fail(f"hook module {module_name!r} not importable: {exc}") \
                from None
        handler = getattr(module, attr, None)
        if not callable(handler):
            raise fail(f"hook {args[0]!r} is not a callable")
        return handler

    raise fail(f"unknown behavior {name!r} (expected constant, counter, "
               "echo, random or hook)")


@dataclass(frozen=True)
class PeriodicEmit:
    """One event the host emits on a fixed cadence."""

    service_id: str
    event: str
    every: float
    behavior: object


@dataclass(frozen=True)
class HostPlan:
    """Everything dpwsd needs: the device identity, its services and
    any periodic emissions."""

    config: DeviceConfig
    services: tuple[ServiceDefinition, ...] = ()
    emits: tuple[PeriodicEmit, ...] = ()


# --- loading ---

_DEVICE_KEYS = ("address", "types", "scopes", "metadata_version", "port",
                "profile", "manufacturer", "model_name", "model_number",
                "model_url", "presentation_url", "friendly_name",
                "firmware_version", "serial_number")


def _parse_qname(text: str, mapping: _Mapping, node) -> QName:
    try:
        return QName.parse(text)
    except ValueError as exc:
        raise mapping.error(node, str(exc)) from None


def _load_device(mapping: _Mapping, port_override: int | None) -> DeviceConfig:
    mapping.reject_unknown(_DEVICE_KEYS)
    model = ThisModel(
        manufacturer=mapping.string("manufacturer", required=True),
        model_name=mapping.string("model_name", required=True),
        model_number=mapping.string("model_number", ""),
        model_url=mapping.string("model_url", ""),
        presentation_url=mapping.string("presentation_url", ""),
    )
    device_info = ThisDevice(
        friendly_name=mapping.string("friendly_name", required=True),
        firmware_version=mapping.string("firmware_version", ""),
        serial_number=mapping.string("serial_number", ""),
    )
    types = []
    for node in mapping.sequence("types"):
        if not isinstance(node, yaml.ScalarNode):
            raise mapping.error(node, "device types must be QName strings")
        types.append(_parse_qname(node.value, mapping, node))
    scopes = []
    for node in mapping.sequence("scopes"):
        if not isinstance(node, yaml.ScalarNode):
            raise mapping.error(node, "scopes must be IRI strings")
        scopes.append(node.value)
    port = port_override if port_override is not None \
        else mapping.scalar("port", 8080)
    metadata_version = mapping.scalar("metadata_version", 1)
    try:
        return DeviceConfig(
            address=mapping.string("address", required=True),
            this_model=model,
            this_device=device_info,
            types=tuple(types),
            scopes=tuple(scopes),
            metadata_version=metadata_version,
            http_port=port,
            version_profile=str(mapping.scalar("profile", "1.1")),
        )
    except InvalidConfig as exc:
        raise mapping.error(mapping.node, str(exc)) from None


def _load_types(service: _Mapping) -> dict[str, str]:
    types_mapping = service.mapping("types", f"{service.label}.types")
    if types_mapping is None:
        return {}
    types = {}
    for name, node in types_mapping.entries.items():
        if not isinstance(node, yaml.ScalarNode) or node.value not in PRIMITIVES:
            raise service.error(
                node, f"type {name!r} must map to one of: "
                f"{', '.join(PRIMITIVES)}")
        types[name] = node.value
    return types


def _load_operation(node, filename: str, label: str,
                    types: dict[str, str]) -> OperationDefinition:
    op = _Mapping(filename, node, label)
    op.reject_unknown(("name", "input", "output", "behavior"))
    name = op.string("name", required=True)
    input_type = op.string("input")
    output_type = op.string("output")
    for direction, type_name in (("input", input_type), ("output", output_type)):
        if type_name is not None and type_name not in types:
            raise op.error(op.node_for(direction),
                           f"operation {name!r} {direction} references "
                           f"unknown type {type_name!r}")
    behavior_spec = op.string("behavior", required=True)

    def fail(message: str) -> ConfigError:
        return op.error(op.node_for("behavior"),
                        f"operation {name!r}: {message}")

    handler = make_behavior(behavior_spec,
                            types[input_type] if input_type else None,
                            types[output_type] if output_type else None,
                            fail)
    return OperationDefinition(name=name, handler=handler,
                               input=input_type, output=output_type)


def _load_event(node, filename: str, label: str, types: dict[str, str],
                service_id: str) -> tuple[EventSourceDefinition, PeriodicEmit | None]:
    event = _Mapping(filename, node, label)
    event.reject_unknown(("name", "payload", "every", "behavior"))
    name = event.string("name", required=True)
    payload = event.string("payload", required=True)
    if payload not in types:
        raise event.error(event.node_for("payload"),
                          f"event {name!r} payload references unknown type "
                          f"{payload!r}")
    definition = EventSourceDefinition(name=name, payload=payload)
    every = event.scalar("every")
    behavior_spec = event.string("behavior")
    if every is None and behavior_spec is None:
        return definition, None
    if every is None or behavior_spec is None:
        raise event.error(event.node,
                          f"event {name!r}: periodic emission needs both "
                          "`every` and `behavior`")
    if not isinstance(every, (int, float)) or isinstance(every, bool) or every <= 0:
        raise event.error(event.node_for("every"),
                          f"event {name!r}: `every` must be a positive "
                          "number of seconds")

    def fail(message: str) -> ConfigError:
        return event.error(event.node_for("behavior"),
                           f"event {name!r}: {message}")

    behavior = make_behavior(behavior_spec, None, types[payload], fail)
    emit = PeriodicEmit(service_id=service_id, event=name,
                        every=float(every), behavior=behavior)
    return definition, emit


def _load_service(node, filename: str, index: int) \
        -> tuple[ServiceDefinition, list[PeriodicEmit]]:
    label = f"services[{index}]"
    service = _Mapping(filename, node, label)
    service.reject_unknown(("id", "types", "operations", "events", "serialized"))
    service_id = service.string("id", required=True)
    types = _load_types(service)
    operations = []
    for i, op_node in enumerate(service.sequence("operations")):
        operations.append(_load_operation(
            op_node, filename, f"{label}.operations[{i}]", types))
    events = []
    emits = []
    for i, event_node in enumerate(service.sequence("events")):
        definition, emit = _load_event(
            event_node, filename, f"{label}.events[{i}]", types, service_id)
        events.append(definition)
        if emit is not None:
            emits.append(emit)
    serialized = service.scalar("serialized", False)
    if not isinstance(serialized, bool):
        raise service.error(service.node_for("serialized"),
                            "serialized must be true or false")
    return ServiceDefinition(
        service_id=service_id,
        types=types,
        operations=tuple(operations),
        events=tuple(events),
        serialized=serialized,
    ), emits


def load_config_text(text: str, filename: str = "<config>",
                     port_override: int | None = None) -> HostPlan:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        if mark is not None:
            raise InvalidConfig(
                f"{filename}:{mark.line + 1}:{mark.column + 1}: "
                f"{getattr(exc, 'problem', exc)}") from None
        raise InvalidConfig(f"{filename}: {exc}") from None
    if root is None:
        raise InvalidConfig(f"{filename}: empty configuration")
    document = _Mapping(filename, root, "configuration")
    document.reject_unknown(("device", "services"))
    device_section = document.mapping("device", "device")
    if device_section is None:
        raise document.error(root, "configuration is missing the device section")
    config = _load_device(device_section, port_override)
    services = []
    emits: list[PeriodicEmit] = []
    seen_ids = set()
    for i, service_node in enumerate(document.sequence("services")):
        definition, service_emits = _load_service(service_node, filename, i)
        if definition.service_id in seen_ids:
            raise ConfigError(filename, service_node,
                              f"duplicate service id {definition.service_id!r}")
        seen_ids.add(definition.service_id)
        services.append(definition)
        emits.extend(service_emits)
    return HostPlan(config=config, services=tuple(services), emits=tuple(emits))


def load_config(path: str, port_override: int | None = None) -> HostPlan:
    """Load and validate one device configuration file."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise InvalidConfig(f"{path}: {exc}") from None
    return load_config_text(text, filename=path, port_override=port_override)
