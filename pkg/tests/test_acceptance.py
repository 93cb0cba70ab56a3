"""Acceptance gate: one test per shipped guarantee.

Each test records a PASS/FAIL verdict through conftest.criterion(), so
the run ends with one line per criterion in the terminal summary.
"""

import random
import re
import statistics
import string
import subprocess
import threading
import time
import urllib.parse
import uuid

import numpy

from dpws import Device, DpwsClient, OperationDefinition, ServiceDefinition
from dpws.cli.bench import run_bench, write_csv
from dpws.discovery import (
    AppSequence,
    AppSequenceSource,
    DeviceAdvertisement,
    ProbeFilter,
    SCOPE_RULE_NONE,
    SCOPE_RULE_RFC3986,
    SCOPE_RULE_STRCMP0,
    build_bye,
    build_hello,
    build_probe_matches,
    is_newer,
    match_probe,
    parse_app_sequence,
)
from dpws.errors import DpwsError
from dpws.eventing import (
    END_DELIVERY_FAILURE,
    STATUS_ACTIVE,
    STATUS_EXPIRED,
    SubscriptionManager,
    build_subscribe,
    parse_subscription_end,
)
from dpws.namespaces import DPWS10, DPWS11
from dpws.soap import (
    EndpointReference,
    envelope,
    envelopes_equal,
    parse_envelope,
    serialize_envelope,
)
from dpws.transport import HttpServer, http_post
from dpws.xmlcodec import QName, element

from conftest import (
    DpwsdProcess,
    criterion,
    make_device_config,
    make_temperature_service,
)
from test_eventing import FakeClock, FakeTransport, MANAGER_URL
from test_eventing import subscribe as wire_subscribe

THERMOMETER_CONFIG = """\
device:
  address: {address}
  friendly_name: Temperature device
  manufacturer: ACME Instruments
  model_name: Thermo 100
  types: ["{{urn:example:sensors}}TemperatureSensor"]
services:
  - id: thermometer
    types: {{temperature: int}}
    operations:
      - name: GetTemperature
        output: temperature
        behavior: constant(0)
    events:
      - name: TemperatureChanged
        payload: temperature
"""


def thermometer_config() -> str:
    return THERMOMETER_CONFIG.format(address=str(uuid.uuid4()))


def parse_bench_stdout(text: str) -> dict:
    requests = re.search(r"requests:\s+(\d+) \((\d+) ok, (\d+) errors\)", text)
    total = re.search(r"total:\s+([0-9.]+) s", text)
    mean = re.search(r"mean:\s+([0-9.]+) ms", text)
    assert requests and total and mean, f"unparseable bench output:\n{text}"
    return {
        "requests": int(requests.group(1)),
        "ok": int(requests.group(2)),
        "errors": int(requests.group(3)),
        "total_s": float(total.group(1)),
        "mean_ms": float(mean.group(1)),
    }


def test_criterion_1_end_to_end_bench(tmp_path):
    with criterion(1, "500-request loopback bench: 0 errors, "
                      "mean < 24.44 ms, total < 12.22 s, wall <= 15 s"):
        host = DpwsdProcess(thermometer_config())
        try:
            assert host.wait_ready(), host.stderr
            out = str(tmp_path / "bench.csv")
            began = time.perf_counter()
            result = subprocess.run(
                ["dpws", "bench", host.loopback_xaddr,
                 "--op", "GetTemperature", "--n", "500", "--out", out],
                capture_output=True, text=True, timeout=120)
            wall = time.perf_counter() - began
            assert result.returncode == 0, result.stderr
            stats = parse_bench_stdout(result.stdout)
            assert stats["requests"] == 500
            assert stats["ok"] == 500, stats
            assert stats["errors"] == 0, stats
            assert stats["mean_ms"] < 24.44, stats
            assert stats["total_s"] < 12.22, stats
            assert wall <= 15.0, f"wall time {wall:.2f}s"
            rows = open(out).read().splitlines()
            assert len(rows) == 501
        finally:
            host.stop()


def test_criterion_2_discovery_integration():
    with criterion(2, "probe finds live device within 4 s window; "
                      "empty again after SIGINT; under 10 s total"):
        began = time.perf_counter()
        host = DpwsdProcess(thermometer_config())
        try:
            assert host.wait_ready(), host.stderr
            address = host.lines[0].split()[2]
            assert address.startswith("urn:uuid:")
            found = subprocess.run(["dpws", "probe", "--timeout", "4000"],
                                   capture_output=True, text=True, timeout=30)
            assert found.returncode == 0, found.stderr
            assert address in found.stdout
        finally:
            code = host.stop()
        assert code == 0
        after = subprocess.run(["dpws", "probe", "--timeout", "2000"],
                               capture_output=True, text=True, timeout=30)
        assert after.returncode == 0, after.stderr
        assert address not in after.stdout
        assert after.stderr.strip().endswith("0 device(s)"), after.stderr
        elapsed = time.perf_counter() - began
        assert elapsed < 10.0, f"took {elapsed:.2f}s"


# -- criterion 3: probe matching against an independent oracle --

TYPE_POOL = tuple(
    QName(ns, local)
    for ns in ("urn:devices:a", "urn:devices:b", "urn:Devices:a",
               "http://example.org/kinds")
    for local in ("Sensor", "sensor", "Printer", "Camera"))

SCOPE_POOL = (
    "ldap://Example.org/unit/floor1",
    "ldap://example.org/unit/floor1/room4",
    "ldap://example.org/unit/floor10",
    "ldap://other.example.org/unit/floor1",
    "http://Example.org/unit/floor1",
    "http://example.org/warehouse",
    "urn:zone:lab",
    "urn:zone:lab:cold",
    "onvif://www.onvif.org/Profile/Streaming",
)


def _mutate_scope(rng: random.Random, scope: str) -> str:
    roll = rng.random()
    if roll < 0.25:
        return scope
    if roll < 0.40:
        head, sep, tail = scope.partition(":")
        return head.upper() + sep + tail
    if roll < 0.55 and "/" in scope.partition("://")[2]:
        return scope.rsplit("/", 1)[0]
    if roll < 0.70:
        return scope.rstrip("/") + "/extra"
    if roll < 0.80:
        return scope + "?probe=1#frag"
    if roll < 0.90:
        return scope.rstrip("/") + "/"
    return scope.swapcase()


def _oracle_scope_rfc3986(probe_scope: str, device_scope: str) -> bool:
    probe = urllib.parse.urlsplit(probe_scope)
    device = urllib.parse.urlsplit(device_scope)
    if probe.scheme.lower() != device.scheme.lower():
        return False
    if probe.netloc.lower() != device.netloc.lower():
        return False
    wanted = [seg for seg in probe.path.split("/") if seg]
    have = [seg for seg in device.path.split("/") if seg]
    if len(wanted) > len(have):
        return False
    for ours, theirs in zip(wanted, have):
        if ours != theirs:
            return False
    return True


def _oracle_match(filter: ProbeFilter, adv: DeviceAdvertisement) -> bool:
    for wanted in filter.types:
        if not any(wanted == have for have in adv.types):
            return False
    if not filter.scopes:
        return True
    if filter.scope_rule == SCOPE_RULE_NONE:
        return False
    for wanted in filter.scopes:
        if filter.scope_rule == SCOPE_RULE_STRCMP0:
            hit = any(wanted == have for have in adv.scopes)
        else:
            hit = any(_oracle_scope_rfc3986(wanted, have)
                      for have in adv.scopes)
        if not hit:
            return False
    return True


def test_criterion_3_matching_oracle_equivalence():
    with criterion(3, "match_probe agrees with a brute-force oracle on "
                      "10,000 random filter/advertisement pairs"):
        rng = random.Random(0xD15C)
        disagreements = []
        matches = 0
        for index in range(10_000):
            adv_types = tuple(rng.sample(TYPE_POOL, rng.randint(0, 4)))
            adv_scopes = tuple(rng.sample(SCOPE_POOL, rng.randint(0, 3)))
            adv = DeviceAdvertisement(
                epr=EndpointReference(f"urn:uuid:{uuid.UUID(int=index)}"),
                types=adv_types, scopes=adv_scopes)

            filter_types = tuple(
                rng.choice(adv_types) if adv_types and rng.random() < 0.7
                else rng.choice(TYPE_POOL)
                for _ in range(rng.randint(0, 2)))
            filter_scopes = tuple(
                _mutate_scope(rng, rng.choice(adv_scopes))
                if adv_scopes and rng.random() < 0.8
                else rng.choice(SCOPE_POOL)
                for _ in range(rng.randint(0, 2)))
            rule = rng.choices(
                (SCOPE_RULE_RFC3986, SCOPE_RULE_STRCMP0, SCOPE_RULE_NONE),
                weights=(6, 3, 1))[0]
            filter = ProbeFilter(types=filter_types, scopes=filter_scopes,
                                 scope_rule=rule)

            got = match_probe(filter, adv)
            expected = _oracle_match(filter, adv)
            if got != expected:
                disagreements.append((filter, adv, got, expected))
            matches += got
        assert not disagreements, \
            f"{len(disagreements)} disagreements, first: {disagreements[0]}"
        # The corpus must exercise both outcomes to mean anything.
        assert 1_000 < matches < 9_000, f"degenerate corpus: {matches} matches"


# -- criterion 4: envelope round trip and the hostile-document corpus --

_ENVELOPE_NS_POOL = ("urn:test:payload", "urn:test:payload2",
                     "http://example.org/app", "urn:x-dpws:service")
_TEXT_ALPHABET = string.ascii_letters + string.digits + " .-_:/éü中√"
# URI-typed addressing fields are whitespace-collapsed on parse (anyURI
# semantics), so the generator keeps them space-free; element text and
# attributes round-trip verbatim and draw from the full alphabet.
_URI_ALPHABET = string.ascii_letters + string.digits + ".-_"


def _random_text(rng: random.Random, limit: int = 16) -> str:
    return "".join(rng.choice(_TEXT_ALPHABET)
                   for _ in range(rng.randint(0, limit)))


def _random_uri_token(rng: random.Random, limit: int = 8) -> str:
    return "".join(rng.choice(_URI_ALPHABET)
                   for _ in range(rng.randint(1, limit)))


def _random_element(rng: random.Random, depth: int):
    name = QName(rng.choice(_ENVELOPE_NS_POOL),
                 rng.choice(("Reading", "Value", "Status", "Item", "r1")))
    children = []
    if depth > 0:
        children = [_random_element(rng, depth - 1)
                    for _ in range(rng.randint(0, 3))]
    attrs = tuple((QName("", f"a{i}"), _random_text(rng, 10))
                  for i in range(rng.randint(0, 2)))
    text = "" if children else _random_text(rng)
    return element(name, *children, attrs=attrs, text=text)


def _random_envelope(rng: random.Random):
    profile = DPWS11 if rng.random() < 0.5 else DPWS10
    action = f"urn:test:actions/{_random_uri_token(rng)}"
    body = _random_element(rng, 2) if rng.random() < 0.85 else None
    reply_to = None
    if rng.random() < 0.4:
        params = tuple(_random_element(rng, 0)
                       for _ in range(rng.randint(0, 2)))
        reply_to = EndpointReference(
            f"http://example.org/{_random_uri_token(rng, 6)}",
            reference_parameters=params)
    extension_headers = tuple(_random_element(rng, 1)
                              for _ in range(rng.randint(0, 2)))
    env = envelope(
        action,
        body,
        to=f"urn:uuid:{uuid.uuid4()}" if rng.random() < 0.7 else "",
        relates_to=f"urn:uuid:{uuid.uuid4()}" if rng.random() < 0.3 else None,
        reply_to=reply_to,
        extension_headers=extension_headers)
    return env, profile


_SOAP_NS = "http://www.w3.org/2003/05/soap-envelope"

ATTACK_CORPUS = (
    # Internal general entity.
    b'<?xml version="1.0"?><!DOCTYPE e [<!ENTITY x "boom">]>'
    b'<e:Envelope xmlns:e="' + _SOAP_NS.encode() + b'">&x;</e:Envelope>',
    # External SYSTEM entity.
    b'<?xml version="1.0"?>'
    b'<!DOCTYPE e [<!ENTITY x SYSTEM "file:///etc/passwd">]>'
    b'<e:Envelope xmlns:e="' + _SOAP_NS.encode() + b'">&x;</e:Envelope>',
    # External DTD by SYSTEM id.
    b'<!DOCTYPE e SYSTEM "http://192.0.2.99/evil.dtd">'
    b'<e:Envelope xmlns:e="' + _SOAP_NS.encode() + b'"/>',
    # External DTD by PUBLIC id.
    b'<!DOCTYPE e PUBLIC "-//EVIL//DTD//EN" "http://192.0.2.99/e.dtd">'
    b'<e:Envelope xmlns:e="' + _SOAP_NS.encode() + b'"/>',
    # Exponential entity expansion.
    b'<?xml version="1.0"?><!DOCTYPE lolz [<!ENTITY a "ha">'
    b'<!ENTITY b "&a;&a;&a;&a;&a;&a;&a;&a;">'
    b'<!ENTITY c "&b;&b;&b;&b;&b;&b;&b;&b;">'
    b'<!ENTITY d "&c;&c;&c;&c;&c;&c;&c;&c;">]>'
    b'<e:Envelope xmlns:e="' + _SOAP_NS.encode() + b'">&d;</e:Envelope>',
    # Parameter entity fetching a remote resource.
    b'<?xml version="1.0"?>'
    b'<!DOCTYPE e [<!ENTITY % p SYSTEM "http://192.0.2.99/x"> %p;]>'
    b'<e:Envelope xmlns:e="' + _SOAP_NS.encode() + b'"/>',
    # Entity reference inside an attribute value.
    b'<?xml version="1.0"?><!DOCTYPE e [<!ENTITY v "boo">]>'
    b'<e:Envelope xmlns:e="' + _SOAP_NS.encode() + b'" note="&v;"/>',
    # Doctype preceded by comment and whitespace.
    b'<?xml version="1.0"?>\n<!-- hi -->\n<!DOCTYPE e [<!ENTITY x "y">]>\n'
    b'<e:Envelope xmlns:e="' + _SOAP_NS.encode() + b'">&x;</e:Envelope>',
)


def test_criterion_4_envelope_round_trip_and_attack_corpus():
    with criterion(4, "10,000 generated envelopes survive "
                      "parse(serialize(e)); all DTD/entity attacks rejected"):
        rng = random.Random(0x50AB)
        failures = []
        for index in range(10_000):
            env, profile = _random_envelope(rng)
            parsed = parse_envelope(serialize_envelope(env, profile))
            if not envelopes_equal(env, parsed):
                failures.append((index, env, parsed))
        assert not failures, \
            f"{len(failures)} round-trip failures, first at {failures[0][0]}"

        rejected = 0
        for attack in ATTACK_CORPUS:
            try:
                parse_envelope(attack)
            except DpwsError:
                rejected += 1
        assert rejected == len(ATTACK_CORPUS), \
            f"only {rejected}/{len(ATTACK_CORPUS)} hostile documents rejected"


def test_criterion_5_app_sequence_ordering():
    with criterion(5, "is_newer equals tuple comparison on 10,000 pairs; "
                      "1,000 mixed announcements strictly increase"):
        rng = random.Random(5)

        def random_seq(instance=None, number=None):
            return AppSequence(
                instance_id=rng.randrange(2**32) if instance is None
                else instance,
                message_number=rng.randrange(1, 2**31) if number is None
                else number,
                sequence_id=rng.choice(("", "urn:q:1", "urn:q:2")))

        disagreements = 0
        for _ in range(10_000):
            a = random_seq()
            roll = rng.random()
            if roll < 0.3:
                b = random_seq(instance=a.instance_id)
            elif roll < 0.4:
                b = random_seq(instance=a.instance_id,
                               number=a.message_number)
            else:
                b = random_seq()
            expected = (a.instance_id, a.message_number) > \
                (b.instance_id, b.message_number)
            if is_newer(a, b) != expected:
                disagreements += 1
        assert disagreements == 0, f"{disagreements} ordering disagreements"

        source = AppSequenceSource()
        adv = DeviceAdvertisement(
            epr=EndpointReference(f"urn:uuid:{uuid.uuid4()}"),
            types=(QName("urn:example:sensors", "TemperatureSensor"),),
            xaddrs=("http://192.0.2.4:8080/dev",))
        numbers = []
        for _ in range(1_000):
            kind = rng.choice(("hello", "bye", "probe_matches"))
            if kind == "hello":
                env = build_hello(adv, source.next())
            elif kind == "bye":
                env = build_bye(adv.epr, source.next())
            else:
                env = build_probe_matches([adv], source.next(),
                                          relates_to=f"urn:uuid:{uuid.uuid4()}")
            seq = parse_app_sequence(parse_envelope(serialize_envelope(env)))
            assert seq is not None
            numbers.append(seq.message_number)
        assert len(numbers) == 1_000
        assert all(later > earlier
                   for earlier, later in zip(numbers, numbers[1:])), \
            "message numbers not strictly increasing"


def test_criterion_6_eventing_lifecycle():
    with criterion(6, "exactly 5 deliveries seq 1..5 around unsubscribe; "
                      "3-strike cancellation with one SubscriptionEnd; "
                      "100-subscription expiry matches its schedule"):
        _eventing_exact_deliveries()
        _eventing_three_strikes()
        _eventing_expiry_schedule()


def _eventing_exact_deliveries():
    device = Device(make_device_config())
    device.add_service(make_temperature_service())
    device.start()
    client = DpwsClient(sink_host="127.0.0.1")
    try:
        xaddr = next(x for x in device.xaddrs if "127.0.0.1" in x)
        service = client.open(xaddr).service("sensor")
        received = []
        got_five = threading.Event()

        def handler(notification):
            received.append(notification)
            if len(received) == 5:
                got_five.set()

        subscription = client.subscribe(service, "TemperatureChanged", handler)
        for value in range(5):
            summaries = device.emit("sensor", "TemperatureChanged", value)
            assert len(summaries) == 1 and summaries[0].ok
        assert got_five.wait(timeout=10.0), \
            f"only {len(received)} deliveries arrived"
        subscription.unsubscribe()
        for value in range(5, 10):
            assert device.emit("sensor", "TemperatureChanged", value) == []
        time.sleep(0.3)
        assert len(received) == 5, f"{len(received)} deliveries, wanted 5"
        assert [n.sequence_number for n in received] == [1, 2, 3, 4, 5]
        assert [n.value for n in received] == [0, 1, 2, 3, 4]
    finally:
        client.close()
        device.stop()


def _eventing_three_strikes():
    device = Device(make_device_config())
    device.add_service(make_temperature_service())
    device.start()
    failing_sink = HttpServer(0, lambda m, p, b: (500, {}, b"no"),
                              host="127.0.0.1")
    failing_sink.start()
    ends = []
    end_seen = threading.Event()

    def collect_end(method, path, body):
        ends.append(parse_envelope(body))
        end_seen.set()
        return 202, {}, b""

    end_server = HttpServer(0, collect_end, host="127.0.0.1")
    end_server.start()
    try:
        service_url = (f"http://127.0.0.1:{device._http.port}"
                       f"/{device.config.uuid}/sensor")
        request = build_subscribe(
            EndpointReference(f"http://127.0.0.1:{failing_sink.port}/sink"),
            to=service_url,
            end_to=EndpointReference(
                f"http://127.0.0.1:{end_server.port}/end"))
        exchange = http_post(service_url, serialize_envelope(request))
        assert exchange.status == 200, exchange.body

        for value in range(3):
            summaries = device.emit("sensor", "TemperatureChanged", value)
            assert len(summaries) == 1 and not summaries[0].ok
        assert end_seen.wait(timeout=10.0), "no SubscriptionEnd arrived"
        assert device.emit("sensor", "TemperatureChanged", 9) == [], \
            "subscription still live after three failures"
        time.sleep(0.3)
        assert len(ends) == 1, f"{len(ends)} SubscriptionEnd messages"
        _, status, reason = parse_subscription_end(ends[0])
        assert status == END_DELIVERY_FAILURE
        assert reason
    finally:
        end_server.stop()
        failing_sink.stop()
        device.stop()


def _eventing_expiry_schedule():
    clock = FakeClock()
    transport = FakeTransport()
    manager = SubscriptionManager(MANAGER_URL, clock=clock, post=transport,
                                  max_duration=2000.0)
    schedule = {}
    for index in range(100):
        expires = (index + 1) * 10.0
        _, manager_ref, granted = wire_subscribe(
            manager, sink_url=f"http://192.0.2.60:9000/s{index}",
            expires=expires)
        assert granted == expires
        sub_id = manager_ref.reference_parameters[0].text
        schedule[sub_id] = clock.now + expires

    remaining = dict(schedule)
    expired_total = 0
    for _ in range(200):
        if not remaining:
            break
        clock.advance(10.0)
        due = {sub_id for sub_id, deadline in remaining.items()
               if deadline <= clock.now}
        newly_expired = manager.expire_subscriptions()
        assert newly_expired == len(due), \
            (f"at t={clock.now} expired {newly_expired}, "
             f"schedule says {len(due)}")
        for sub_id in due:
            assert manager.subscription(sub_id).status == STATUS_EXPIRED
            del remaining[sub_id]
        for sub_id in remaining:
            assert manager.subscription(sub_id).status == STATUS_ACTIVE
        expired_total += newly_expired
    assert expired_total == 100
    assert transport.deliveries == [], \
        "natural expiry must not send SubscriptionEnd"


def _bench_service() -> ServiceDefinition:
    def constant_zero(value, cb):
        cb(None, 0)

    def echo(value, cb):
        cb(None, value)

    def slow(value, cb):
        time.sleep(0.25)
        cb(None, 0)

    return ServiceDefinition(
        service_id="bench",
        types={"temperature": "int", "text": "string"},
        operations=(
            OperationDefinition("GetTemperature", constant_zero,
                                output="temperature"),
            OperationDefinition("Echo", echo, input="text", output="text"),
            OperationDefinition("Slow", slow, output="temperature"),
        ),
    )


def test_criterion_7_concurrency_contract():
    with criterion(7, "100 loops x 10 requests: 0 errors, correct payloads; "
                      "fast-op median within 3x while a slow call is in flight"):
        device = Device(make_device_config())
        device.add_service(_bench_service())
        device.start()
        client = DpwsClient(sink_host="127.0.0.1")
        try:
            xaddr = next(x for x in device.xaddrs if "127.0.0.1" in x)
            service = client.open(xaddr).service("bench")

            counter = [0]
            counter_lock = threading.Lock()

            def echo_unique():
                with counter_lock:
                    counter[0] += 1
                    token = f"payload-{counter[0]}"
                out = client.invoke(service, "Echo", token)
                if out != token:
                    raise AssertionError(f"sent {token!r}, got {out!r}")

            report = run_bench(echo_unique, n=10, concurrency=100)
            assert report.errors == 0, report.error_details[:3]
            assert len(report.samples) == 1000
            assert counter[0] == 1000

            def fast_median() -> float:
                latencies = []
                for _ in range(100):
                    begin = time.perf_counter()
                    value = client.invoke(service, "GetTemperature")
                    latencies.append(time.perf_counter() - begin)
                    assert value == 0
                return statistics.median(latencies)

            uncontended = fast_median()

            stop_slow = threading.Event()

            def slow_caller():
                while not stop_slow.is_set():
                    client.invoke(service, "Slow", timeout=30.0)

            background = threading.Thread(target=slow_caller)
            background.start()
            try:
                time.sleep(0.05)
                contended = fast_median()
            finally:
                stop_slow.set()
                background.join(timeout=10.0)
            assert contended <= 3 * uncontended, \
                (f"fast-op median {contended * 1000:.3f} ms vs uncontended "
                 f"{uncontended * 1000:.3f} ms")
        finally:
            client.close()
            device.stop()


def test_criterion_8_report_integrity(tmp_path):
    with criterion(8, "CSV recomputation matches in-memory statistics "
                      "within 1e-9; percentiles are monotonic"):
        device = Device(make_device_config())
        device.add_service(_bench_service())
        device.start()
        client = DpwsClient(sink_host="127.0.0.1")
        try:
            xaddr = next(x for x in device.xaddrs if "127.0.0.1" in x)
            service = client.open(xaddr).service("bench")
            report = run_bench(
                lambda: client.invoke(service, "GetTemperature"),
                n=150, concurrency=2)
            assert report.errors == 0, report.error_details[:3]

            path = str(tmp_path / "report.csv")
            write_csv(report, path)
            latencies = numpy.loadtxt(path, delimiter=",", skiprows=1,
                                      usecols=2)
            assert latencies.shape == (300,)

            def close(a, b):
                return abs(a - b) <= 1e-9 * max(abs(a), abs(b))

            assert close(float(numpy.mean(latencies)), report.mean_ms)
            for p, got in ((50.0, report.median_ms), (90.0, report.p90_ms),
                           (99.0, report.p99_ms)):
                want = float(numpy.percentile(latencies, p))
                assert close(want, got), (p, want, got)
            assert close(float(numpy.min(latencies)), report.min_ms)
            assert close(float(numpy.max(latencies)), report.max_ms)
            assert report.median_ms <= report.p90_ms <= report.p99_ms \
                <= report.max_ms
        finally:
            client.close()
            device.stop()
