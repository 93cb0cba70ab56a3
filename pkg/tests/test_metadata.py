"""Metadata exchange: validation, service descriptions, wire round trips."""

import pytest

from dpws.errors import FaultReceived, InvalidConfig, MalformedMetadata
from dpws.metadata import (
    DeviceMetadata,
    EventDescription,
    HostedService,
    OperationDescription,
    Relationship,
    ServiceDescription,
    ThisDevice,
    ThisModel,
    build_get_request,
    build_metadata_body,
    build_metadata_response,
    describe_service,
    get_metadata,
    metadata_version_header,
    operation_action,
    parse_metadata,
    parse_service_description,
    response_action,
)
from dpws.namespaces import ACTION_GET, ACTION_GET_RESPONSE, DPWS10, DPWS11
from dpws.soap import EndpointReference, envelope, fault_info, parse_envelope, serialize_envelope
from dpws.transport import http_serve
from dpws.xmlcodec import QName, parse_xml, serialize_xml

PORT_TYPE = QName("urn:x-dpws:service", "sensor")


def sample_description():
    return ServiceDescription(
        service_id="sensor",
        port_type=PORT_TYPE,
        types=(("temperature", "int"), ("text", "string")),
        operations=(
            OperationDescription("GetTemperature", input=None, output="temperature"),
            OperationDescription("Echo", input="text", output="text"),
            OperationDescription("Reset", input=None, output=None),
        ),
        events=(EventDescription("TemperatureChanged", "temperature"),),
    )


def sample_metadata(description=None, version=1):
    hosted = HostedService(
        epr=EndpointReference("http://192.0.2.7:8080/dev/sensor"),
        types=(PORT_TYPE,),
        service_id="sensor",
        description=description,
    )
    return DeviceMetadata(
        this_model=ThisModel(manufacturer="ACME Instruments",
                             model_name="Thermo 100",
                             model_number="T-100",
                             model_url="http://example.org/t100",
                             presentation_url="http://192.0.2.7:8080/"),
        this_device=ThisDevice(friendly_name="Lab thermometer",
                               firmware_version="2.4",
                               serial_number="SN-0099"),
        relationship=Relationship(
            host=EndpointReference("urn:uuid:55555555-5555-5555-5555-555555555555"),
            host_types=(DPWS11.device_type,),
            hosted=(hosted,),
        ),
        metadata_version=version,
    )


class TestValidation:
    def test_this_model_requires_manufacturer_and_name(self):
        with pytest.raises(InvalidConfig):
            ThisModel(manufacturer="", model_name="X")
        with pytest.raises(InvalidConfig):
            ThisModel(manufacturer="ACME", model_name="")

    def test_urls_must_be_absolute(self):
        with pytest.raises(InvalidConfig):
            ThisModel(manufacturer="A", model_name="B", model_url="not-a-url")
        with pytest.raises(InvalidConfig):
            ThisModel(manufacturer="A", model_name="B", presentation_url="/relative")

    def test_this_device_requires_friendly_name(self):
        with pytest.raises(InvalidConfig):
            ThisDevice(friendly_name="")

    def test_duplicate_hosted_ids_rejected(self):
        entry = HostedService(epr=EndpointReference("http://h/1"),
                              types=(), service_id="dup")
        with pytest.raises(InvalidConfig):
            Relationship(host=EndpointReference("urn:uuid:h"),
                         hosted=(entry, entry))


class TestActions:
    def test_action_convention(self):
        assert operation_action(PORT_TYPE, "GetTemperature") == \
            "urn:x-dpws:service/sensor/GetTemperature"
        assert response_action(PORT_TYPE, "GetTemperature") == \
            "urn:x-dpws:service/sensor/GetTemperatureResponse"

    def test_description_action_lookup(self):
        desc = sample_description()
        assert desc.action_for("Echo") == "urn:x-dpws:service/sensor/Echo"

    def test_http_namespace_port_type(self):
        port = QName("http://example.org/ns", "valve")
        assert operation_action(port, "Open") == "http://example.org/ns/valve/Open"


class TestServiceDescription:
    def test_round_trip_through_xml(self):
        desc = sample_description()
        elem = describe_service(desc)
        back = parse_service_description(parse_xml(serialize_xml(elem)))
        assert back == desc

    def test_lookups(self):
        desc = sample_description()
        assert desc.primitive_of("temperature") == "int"
        assert desc.primitive_of("missing") is None
        assert desc.operation("Echo").input == "text"
        assert desc.operation("Nope") is None
        assert desc.event("TemperatureChanged").payload == "temperature"
        assert desc.event("Nope") is None

    def test_parse_rejects_missing_id(self):
        elem = describe_service(sample_description())
        stripped = type(elem)(name=elem.name, attributes=(),
                              children=elem.children, text=elem.text,
                              ns_decls=elem.ns_decls)
        with pytest.raises(MalformedMetadata):
            parse_service_description(stripped)

    def test_parse_rejects_bad_primitive(self):
        doc = (b'<Service xmlns="urn:x-dpws:description:1" Id="s">'
               b'<PortType xmlns:q0="urn:p">q0:s</PortType>'
               b'<Types><Type Name="t" Primitive="decimal"/></Types>'
               b'</Service>')
        with pytest.raises(MalformedMetadata):
            parse_service_description(parse_xml(doc))

    def test_parse_requires_port_type(self):
        doc = b'<Service xmlns="urn:x-dpws:description:1" Id="s"/>'
        with pytest.raises(MalformedMetadata):
            parse_service_description(parse_xml(doc))


class TestMetadataRoundTrip:
    @pytest.mark.parametrize("profile", (DPWS11, DPWS10), ids=("1.1", "1.0"))
    def test_full_round_trip(self, profile):
        meta = sample_metadata(description=sample_description(), version=4)
        request = build_get_request("http://192.0.2.7:8080/dev", profile)
        response = build_metadata_response(request, meta, profile)
        assert response.action == ACTION_GET_RESPONSE
        assert response.addressing.relates_to == request.message_id

        back = parse_metadata(
            parse_envelope(serialize_envelope(response, profile)), profile)
        assert back.this_model == meta.this_model
        assert back.this_device == meta.this_device
        assert back.metadata_version == 4
        assert back.relationship.host.address == meta.relationship.host.address
        assert back.relationship.host_types == meta.relationship.host_types
        hosted = back.relationship.hosted
        assert len(hosted) == 1
        assert hosted[0].service_id == "sensor"
        assert hosted[0].types == (PORT_TYPE,)
        assert hosted[0].epr.address == "http://192.0.2.7:8080/dev/sensor"
        assert hosted[0].description == sample_description()

    def test_round_trip_without_description(self):
        meta = sample_metadata(description=None)
        request = build_get_request("http://h/dev")
        back = parse_metadata(parse_envelope(serialize_envelope(
            build_metadata_response(request, meta))))
        assert back.relationship.hosted[0].description is None

    def test_optional_model_fields_default_empty(self):
        meta = DeviceMetadata(
            this_model=ThisModel(manufacturer="A", model_name="B"),
            this_device=ThisDevice(friendly_name="C"),
            relationship=Relationship(host=EndpointReference("urn:uuid:h")))
        request = build_get_request("http://h/dev")
        back = parse_metadata(parse_envelope(serialize_envelope(
            build_metadata_response(request, meta))))
        assert back.this_model.model_number == ""
        assert back.this_device.serial_number == ""
        assert back.metadata_version == 1

    def test_wrong_action_gets_sender_fault(self):
        meta = sample_metadata()
        request = envelope("urn:example:other/Action", to="http://h/dev")
        response = build_metadata_response(request, meta)
        assert response.is_fault
        info = fault_info(parse_envelope(serialize_envelope(response)))
        assert info.code == "Sender"
        assert info.subcode == QName(DPWS11.addressing, "ActionNotSupported")
        assert response.addressing.relates_to == request.message_id

    def test_version_header_round_trip(self):
        header = metadata_version_header(12)
        env = envelope(ACTION_GET_RESPONSE,
                       build_metadata_body(sample_metadata()),
                       extension_headers=(header,))
        back = parse_metadata(parse_envelope(serialize_envelope(env)))
        assert back.metadata_version == 12

    def test_missing_section_rejected(self):
        # A Metadata body with only ThisModel must not parse.
        meta = sample_metadata()
        body = build_metadata_body(meta)
        pruned = type(body)(name=body.name, attributes=body.attributes,
                            children=body.children[:1], text=body.text,
                            ns_decls=body.ns_decls)
        env = envelope(ACTION_GET_RESPONSE, pruned)
        with pytest.raises(MalformedMetadata):
            parse_metadata(parse_envelope(serialize_envelope(env)))

    def test_non_metadata_body_rejected(self):
        env = envelope(ACTION_GET_RESPONSE, None)
        with pytest.raises(MalformedMetadata):
            parse_metadata(env)


class TestGetMetadata:
    def test_fetch_over_http(self):
        meta = sample_metadata(description=sample_description(), version=2)

        def handler(method, path, body):
            request = parse_envelope(body)
            response = build_metadata_response(request, meta)
            return 200, {"Content-Type": "application/soap+xml"}, \
                serialize_envelope(response)

        server = http_serve(0, handler, host="127.0.0.1")
        try:
            url = f"http://127.0.0.1:{server.port}/dev"
            fetched = get_metadata(url)
            assert fetched.this_device.friendly_name == "Lab thermometer"
            assert fetched.metadata_version == 2
            assert fetched.relationship.hosted[0].description == sample_description()
        finally:
            server.stop()

    def test_fault_response_raises(self):
        def handler(method, path, body):
            request = parse_envelope(body)
            bad = envelope("urn:example:other/Action",
                           message_id=request.message_id)
            response = build_metadata_response(bad, sample_metadata())
            return 500, {"Content-Type": "application/soap+xml"}, \
                serialize_envelope(response)

        server = http_serve(0, handler, host="127.0.0.1")
        try:
            with pytest.raises(FaultReceived):
                get_metadata(f"http://127.0.0.1:{server.port}/dev")
        finally:
            server.stop()
