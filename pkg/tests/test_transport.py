"""UDP multicast and HTTP plumbing."""

import random
import threading
import time

import pytest

from dpws.errors import BindFailure, ConnectFailure, Oversize, Timeout
from dpws.transport import (
    MULTICAST_GROUP_V4,
    MULTICAST_PORT,
    ONCE,
    UDP_MAX_PAYLOAD,
    HttpClientConnection,
    HttpServer,
    MulticastEndpoint,
    RetransmitPolicy,
    UdpListener,
    http_post,
    http_serve,
    primary_ipv4,
    udp_send,
)

from conftest import free_port


class TestRetransmitPolicy:
    def test_default_schedule_shape(self):
        policy = RetransmitPolicy()
        rng = random.Random(7)
        for _ in range(200):
            gaps = policy.delays(rng)
            assert len(gaps) == policy.repeats == 2
            assert 0.050 <= gaps[0] <= 0.250
            # Second gap doubles, capped at half a second.
            assert gaps[1] == min(gaps[0] * 2, 0.500)

    def test_doubling_hits_cap(self):
        policy = RetransmitPolicy(repeats=5, delay_min=0.2, delay_max=0.2)
        gaps = policy.delays(random.Random(1))
        assert gaps == [0.2, 0.4, 0.5, 0.5, 0.5]

    def test_draw_varies_between_messages(self):
        policy = RetransmitPolicy()
        rng = random.Random(99)
        first_gaps = {policy.delays(rng)[0] for _ in range(50)}
        assert len(first_gaps) > 10

    def test_seeded_rng_reproducible(self):
        policy = RetransmitPolicy()
        assert policy.delays(random.Random(5)) == policy.delays(random.Random(5))

    def test_once_sends_single_datagram(self):
        assert ONCE.repeats == 0
        assert ONCE.delays() == []

    def test_validation(self):
        with pytest.raises(ValueError):
            RetransmitPolicy(repeats=-1)
        with pytest.raises(ValueError):
            RetransmitPolicy(delay_min=0.3, delay_max=0.2)
        with pytest.raises(ValueError):
            RetransmitPolicy(delay_min=-0.1)


class TestUdp:
    def test_oversize_datagram_refused(self):
        dest = (MULTICAST_GROUP_V4, MULTICAST_PORT)
        with pytest.raises(Oversize):
            udp_send(b"x" * (UDP_MAX_PAYLOAD + 1), dest)

    def test_multicast_loopback_delivery(self):
        received = []
        seen = threading.Event()

        def handler(payload, source):
            received.append((payload, source))
            seen.set()

        listener = UdpListener(MulticastEndpoint(), handler)
        listener.start()
        try:
            marker = b"<ping>" + str(time.time_ns()).encode() + b"</ping>"
            udp_send(marker, (MULTICAST_GROUP_V4, MULTICAST_PORT))
            assert seen.wait(timeout=2.0), "datagram never looped back"
            assert any(payload == marker for payload, _ in received)
        finally:
            listener.stop()

    def test_retransmissions_arrive(self):
        hits = []
        done = threading.Event()

        def handler(payload, source):
            if payload == b"<echo/>":
                hits.append(source)
                if len(hits) >= 3:
                    done.set()

        listener = UdpListener(MulticastEndpoint(), handler)
        listener.start()
        try:
            policy = RetransmitPolicy(repeats=2, delay_min=0.01, delay_max=0.02)
            udp_send(b"<echo/>", (MULTICAST_GROUP_V4, MULTICAST_PORT), policy)
            assert done.wait(timeout=2.0), f"saw {len(hits)} of 3 transmissions"
        finally:
            listener.stop()

    def test_listener_reply_from_discovery_port(self):
        got = threading.Event()
        sources = []

        def handler(payload, source):
            sources.append(source)
            got.set()

        listener = UdpListener(MulticastEndpoint(), handler)
        listener.start()
        try:
            udp_send(b"<q/>", (MULTICAST_GROUP_V4, MULTICAST_PORT))
            assert got.wait(timeout=2.0)
            # Replying through the listener works and stays under the cap.
            listener.send(b"<r/>", sources[0])
            with pytest.raises(Oversize):
                listener.send(b"y" * (UDP_MAX_PAYLOAD + 1), sources[0])
        finally:
            listener.stop()

    def test_primary_ipv4_is_dotted_quad(self):
        addr = primary_ipv4()
        parts = addr.split(".")
        assert len(parts) == 4
        assert all(0 <= int(p) <= 255 for p in parts)


def _echo_handler(method, path, body):
    return 200, {"Content-Type": "text/plain"}, b"echo:" + body


class TestHttp:
    def test_post_round_trip(self):
        server = http_serve(0, _echo_handler, host="127.0.0.1")
        try:
            url = f"http://127.0.0.1:{server.port}/svc"
            exchange = http_post(url, b"hello")
            assert exchange.status == 200
            assert exchange.body == b"echo:hello"
            assert exchange.content_type.startswith("text/plain")
        finally:
            server.stop()

    def test_ephemeral_port_reported(self):
        server = http_serve(0, _echo_handler, host="127.0.0.1")
        try:
            assert server.port > 0
        finally:
            server.stop()

    def test_bind_failure(self):
        server = http_serve(0, _echo_handler, host="127.0.0.1")
        try:
            with pytest.raises(BindFailure):
                HttpServer(server.port, _echo_handler, host="127.0.0.1")
        finally:
            server.stop()

    def test_connect_failure(self):
        with pytest.raises(ConnectFailure):
            http_post(f"http://127.0.0.1:{free_port()}/", b"x", timeout=0.5)

    def test_client_timeout(self):
        def slow(method, path, body):
            time.sleep(0.8)
            return 200, {}, b"late"

        server = http_serve(0, slow, host="127.0.0.1")
        try:
            with pytest.raises(Timeout):
                http_post(f"http://127.0.0.1:{server.port}/", b"x", timeout=0.2)
        finally:
            server.stop()

    def test_handler_exception_becomes_500(self):
        def broken(method, path, body):
            raise RuntimeError("boom")

        server = http_serve(0, broken, host="127.0.0.1")
        try:
            exchange = http_post(f"http://127.0.0.1:{server.port}/", b"x")
            assert exchange.status == 500
        finally:
            server.stop()

    def test_stop_drains_in_flight_request(self):
        release = threading.Event()
        entered = threading.Event()

        def gated(method, path, body):
            entered.set()
            release.wait(timeout=5.0)
            return 200, {}, b"drained"

        server = http_serve(0, gated, host="127.0.0.1")
        url = f"http://127.0.0.1:{server.port}/"
        result = {}

        def client():
            result["exchange"] = http_post(url, b"x", timeout=5.0)

        thread = threading.Thread(target=client)
        thread.start()
        assert entered.wait(timeout=2.0)

        def stopper():
            server.stop(drain=3.0)

        stop_thread = threading.Thread(target=stopper)
        stop_thread.start()
        time.sleep(0.1)
        release.set()
        thread.join(timeout=5.0)
        stop_thread.join(timeout=5.0)
        assert result["exchange"].status == 200
        assert result["exchange"].body == b"drained"

    def test_concurrent_requests_do_not_serialize(self):
        def sleepy(method, path, body):
            time.sleep(0.3)
            return 200, {}, b"ok"

        server = http_serve(0, sleepy, host="127.0.0.1")
        try:
            url = f"http://127.0.0.1:{server.port}/"
            threads = [threading.Thread(target=http_post, args=(url, b"x"))
                       for _ in range(4)]
            started = time.perf_counter()
            for t in threads:
                t.start()
            for t in threads:
                t.join(timeout=5.0)
            elapsed = time.perf_counter() - started
            assert elapsed < 0.9, f"4 parallel 0.3s requests took {elapsed:.2f}s"
        finally:
            server.stop()

    def test_keep_alive_connection_reuse_and_recovery(self):
        server = http_serve(0, _echo_handler, host="127.0.0.1")
        conn = HttpClientConnection(f"http://127.0.0.1:{server.port}")
        try:
            for i in range(5):
                exchange = conn.post("/svc", f"m{i}".encode())
                assert exchange.status == 200
                assert exchange.body == f"echo:m{i}".encode()
            # Stale pooled connection after a server restart on the same
            # port: the client reconnects once and succeeds.
            port = server.port
            server.stop()
            server = http_serve(port, _echo_handler, host="127.0.0.1")
            exchange = conn.post("/svc", b"again")
            assert exchange.status == 200
        finally:
            conn.close()
            server.stop()

    def test_non_http_url_refused(self):
        with pytest.raises(ConnectFailure):
            http_post("https://127.0.0.1:1/", b"x")
