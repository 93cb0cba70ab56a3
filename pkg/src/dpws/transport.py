"""UDP multicast and HTTP/1.1 plumbing.

This module moves octets, nothing more: SOAP-over-UDP datagrams with the
conventional retransmission schedule, and a small threaded HTTP server /
client pair for SOAP POST exchanges. Duplicate suppression, envelope
caps and message semantics belong to the layers above.
"""
from __future__ import annotations

import http.client
import logging
import random
import socket
import struct
import threading
import time
import urllib.parse
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .errors import (
    BindFailure,
    ConnectFailure,
    JoinFailure,
    Oversize,
    ProtocolError,
    SocketError,
    Timeout,
)

log = logging.getLogger(__name__)

MULTICAST_GROUP_V4 = "239.255.255.250"
MULTICAST_GROUP_V6 = "FF02::C"
MULTICAST_PORT = 3702

UDP_MAX_PAYLOAD = 4096
RECV_BUFFER = 65535


@dataclass(frozen=True)
class MulticastEndpoint:
    """Where discovery traffic lives. IPv4 and IPv6 are independently
    togglable; the sender uses a TTL/hop limit of 1 so announcements stay
    on the local link."""

    group_v4: str = MULTICAST_GROUP_V4
    group_v6: str = MULTICAST_GROUP_V6
    port: int = MULTICAST_PORT
    interface: str | None = None
    ipv4: bool = True
    ipv6: bool = False

    def __post_init__(self):
        if not (self.ipv4 or self.ipv6):
            raise ValueError("endpoint must enable at least one address family")


@dataclass(frozen=True)
class RetransmitPolicy:
    """SOAP-over-UDP schedule: 1 + repeats transmissions, the first gap a
    uniform draw from [delay_min, delay_max], doubling per repeat and
    capped at delay_cap. Delays are independent draws per message."""

    repeats: int = 2
    delay_min: float = 0.050
    delay_max: float = 0.250
    delay_cap: float = 0.500

    def __post_init__(self):
        if self.repeats < 0:
            raise ValueError("repeats must be >= 0")
        if not (0 <= self.delay_min <= self.delay_max):
            raise ValueError("need 0 <= delay_min <= delay_max")

    def delays(self, rng: random.Random | None = None) -> list[float]:
        """Inter-transmission gaps for one message (length == repeats)."""
        draw = (rng or random).uniform(self.delay_min, self.delay_max)
        gaps = []
        for _ in range(self.repeats):
            gaps.append(min(draw, self.delay_cap))
            draw *= 2
        return gaps


ONCE = RetransmitPolicy(repeats=0)


def primary_ipv4() -> str:
    """The address of the interface the OS would route multicast out
    of; loopback when there is no route. A connect() on a datagram
    socket selects the source address without sending anything."""
    probe = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    try:
        probe.connect((MULTICAST_GROUP_V4, MULTICAST_PORT))
        return probe.getsockname()[0]
    except OSError:
        return "127.0.0.1"
    finally:
        probe.close()


def open_udp_socket(family: int = socket.AF_INET, ttl: int = 1) -> socket.socket:
    """Ephemeral UDP socket configured for link-local multicast sends."""
    sock = socket.socket(family, socket.SOCK_DGRAM)
    try:
        if family == socket.AF_INET:
            sock.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_TTL, ttl)
            sock.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_LOOP, 1)
        else:
            sock.setsockopt(socket.IPPROTO_IPV6, socket.IPV6_MULTICAST_HOPS, ttl)
            sock.setsockopt(socket.IPPROTO_IPV6, socket.IPV6_MULTICAST_LOOP, 1)
    except OSError as exc:
        sock.close()
        raise SocketError(f"could not configure multicast socket: {exc}") from exc
    return sock


def udp_send(
    payload: bytes,
    dest: tuple,
    policy: RetransmitPolicy = ONCE,
    sock: socket.socket | None = None,
    rng: random.Random | None = None,
):
    """Transmit one datagram 1 + policy.repeats times, blocking through
    the schedule. Raises Oversize for payloads past the SOAP-over-UDP cap
    and SocketError for OS-level send failures."""
    if len(payload) > UDP_MAX_PAYLOAD:
        raise Oversize(f"datagram is {len(payload)} octets, cap is {UDP_MAX_PAYLOAD}")
    family = socket.AF_INET6 if ":" in dest[0] else socket.AF_INET
    own = sock is None
    if own:
        sock = open_udp_socket(family)
    try:
        gaps = policy.delays(rng)
        for i in range(policy.repeats + 1):
            try:
                sock.sendto(payload, dest)
            except OSError as exc:
                raise SocketError(f"send to {dest} failed: {exc}") from exc
            if i < len(gaps):
                time.sleep(gaps[i])
    finally:
        if own:
            sock.close()


class UdpListener:
    """Multicast group membership plus a reader thread per family.

    The handler receives every datagram as (payload, source_address) on a
    reader thread and must be reentrant. Replies can be sent from the
    listening socket itself via send() so they originate from the
    discovery port.
    """

    def __init__(self, endpoint: MulticastEndpoint, handler):
        self.endpoint = endpoint
        self.handler = handler
        self._socks: list[socket.socket] = []
        self._threads: list[threading.Thread] = []
        self._running = False
        self._v4_sock: socket.socket | None = None

    def start(self):
        if self._running:
            return
        joined = 0
        if self.endpoint.ipv4:
            try:
                self._v4_sock = self._open_v4()
                self._socks.append(self._v4_sock)
                joined += 1
            except OSError as exc:
                if isinstance(exc, BindFailure):
                    raise
                log.warning("IPv4 multicast join failed: %s", exc)
        if self.endpoint.ipv6:
            try:
                self._socks.append(self._open_v6())
                joined += 1
            except OSError as exc:
                if isinstance(exc, BindFailure):
                    raise
                log.warning("IPv6 multicast join failed: %s", exc)
        if joined == 0:
            raise JoinFailure("no multicast group could be joined")
        self._running = True
        for sock in self._socks:
            thread = threading.Thread(target=self._reader, args=(sock,), daemon=True)
            thread.start()
            self._threads.append(thread)

    def stop(self):
        if not self._running:
            return
        self._running = False
        for sock in self._socks:
            try:
                sock.close()
            except OSError:
                pass
        for thread in self._threads:
            thread.join(timeout=1.0)
        self._socks.clear()
        self._threads.clear()
        self._v4_sock = None

    def send(self, payload: bytes, dest: tuple, policy: RetransmitPolicy = ONCE):
        """Send from the bound discovery socket (source port 3702)."""
        sock = self._v4_sock if ":" not in dest[0] else None
        udp_send(payload, dest, policy, sock=sock)

    def _open_v4(self) -> socket.socket:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        if hasattr(socket, "SO_REUSEPORT"):
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEPORT, 1)
        try:
            sock.bind(("", self.endpoint.port))
        except OSError as exc:
            sock.close()
            raise BindFailure(f"UDP port {self.endpoint.port} unavailable: {exc}") from exc
        iface = socket.inet_aton(self.endpoint.interface or "0.0.0.0")
        mreq = socket.inet_aton(self.endpoint.group_v4) + iface
        try:
            sock.setsockopt(socket.IPPROTO_IP, socket.IP_ADD_MEMBERSHIP, mreq)
        except OSError as exc:
            sock.close()
            raise JoinFailure(f"IPv4 group join failed: {exc}") from exc
        sock.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_TTL, 1)
        sock.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_LOOP, 1)
        return sock

    def _open_v6(self) -> socket.socket:
        sock = socket.socket(socket.AF_INET6, socket.SOCK_DGRAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        if hasattr(socket, "SO_REUSEPORT"):
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEPORT, 1)
        try:
            sock.bind(("::", self.endpoint.port))
        except OSError as exc:
            sock.close()
            raise BindFailure(f"UDP6 port {self.endpoint.port} unavailable: {exc}") from exc
        index = 0
        if self.endpoint.interface:
            try:
                index = socket.if_nametoindex(self.endpoint.interface)
            except OSError:
                index = 0
        group = socket.inet_pton(socket.AF_INET6, self.endpoint.group_v6)
        mreq = group + struct.pack("@I", index)
        try:
            sock.setsockopt(socket.IPPROTO_IPV6, socket.IPV6_JOIN_GROUP, mreq)
        except OSError as exc:
            sock.close()
            raise JoinFailure(f"IPv6 group join failed: {exc}") from exc
        sock.setsockopt(socket.IPPROTO_IPV6, socket.IPV6_MULTICAST_HOPS, 1)
        sock.setsockopt(socket.IPPROTO_IPV6, socket.IPV6_MULTICAST_LOOP, 1)
        return sock

    def _reader(self, sock: socket.socket):
        while self._running:
            try:
                payload, addr = sock.recvfrom(RECV_BUFFER)
            except OSError:
                return
            try:
                self.handler(payload, addr)
            except Exception:
                log.exception("datagram handler raised")


def udp_listen(endpoint: MulticastEndpoint, handler) -> UdpListener:
    """Join the discovery group(s) and deliver datagrams to handler."""
    listener = UdpListener(endpoint, handler)
    listener.start()
    return listener


# --- HTTP ---

@dataclass(frozen=True)
class HttpExchange:
    """Outcome of one client-side POST."""

    status: int
    body: bytes
    content_type: str = ""


SOAP_CONTENT_TYPE = "application/soap+xml"


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "dpws/0.1"

    def _dispatch(self, body: bytes):
        server: HttpServer = self.server.owner  # type: ignore[attr-defined]
        server.begin_request()
        try:
            status, headers, payload = server.handler(self.command, self.path, body)
        except Exception:
            log.exception("HTTP handler raised")
            status, headers, payload = 500, {"Content-Type": "text/plain"}, b"internal error"
        finally:
            server.end_request()
        self.send_response(status)
        for name, value in headers.items():
            self.send_header(name, value)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def _read_body(self) -> bytes:
        length = int(self.headers.get("Content-Length", "0") or "0")
        return self.rfile.read(length) if length else b""

    def do_POST(self):
        self._dispatch(self._read_body())

    def do_GET(self):
        self._dispatch(b"")

    # Other verbs reach the application handler too, so that it owns the
    # method-not-allowed policy instead of the transport answering 501.
    def do_PUT(self):
        self._dispatch(self._read_body())

    def do_DELETE(self):
        self._dispatch(self._read_body())

    def do_HEAD(self):
        self._dispatch(b"")

    def do_OPTIONS(self):
        self._dispatch(b"")

    def log_message(self, fmt, *args):
        log.debug("http: " + fmt, *args)


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True
    # The socketserver default backlog of 5 drops connections under a
    # concurrent-client burst; size it for bench-style fan-in.
    request_queue_size = 128


class HttpServer:
    """Threaded HTTP/1.1 server for SOAP POST exchanges.

    The handler is called as handler(method, path, body) and returns
    (status, headers, body) with headers a plain dict (Content-Length is
    added automatically). Connections are served on independent threads,
    so one stalled handler never blocks another connection. stop()
    drains in-flight exchanges for up to drain seconds.
    """

    def __init__(self, port: int, handler, host: str = "0.0.0.0"):
        self.handler = handler
        try:
            self._server = _Server((host, port), _Handler)
        except OSError as exc:
            raise BindFailure(f"HTTP port {port} unavailable: {exc}") from exc
        self._server.owner = self  # type: ignore[attr-defined]
        self._thread: threading.Thread | None = None
        self._inflight = 0
        self._lock = threading.Lock()
        self._idle = threading.Event()
        self._idle.set()

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    def begin_request(self):
        with self._lock:
            self._inflight += 1
            self._idle.clear()

    def end_request(self):
        with self._lock:
            self._inflight -= 1
            if self._inflight == 0:
                self._idle.set()

    def start(self):
        if self._thread is not None:
            return
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        kwargs={"poll_interval": 0.05}, daemon=True)
        self._thread.start()

    def stop(self, drain: float = 2.0):
        if self._thread is None:
            return
        self._server.shutdown()
        self._thread.join(timeout=drain + 1.0)
        self._idle.wait(timeout=drain)
        self._server.server_close()
        self._thread = None


def http_serve(port: int, handler, host: str = "0.0.0.0") -> HttpServer:
    """Bind and start serving; see HttpServer for the handler contract."""
    server = HttpServer(port, handler, host=host)
    server.start()
    return server


def _split_url(url: str) -> tuple[str, int, str]:
    parsed = urllib.parse.urlsplit(url)
    if parsed.scheme != "http":
        raise ConnectFailure(f"only http URLs are supported, got {url!r}")
    host = parsed.hostname or ""
    port = parsed.port or 80
    path = parsed.path or "/"
    if parsed.query:
        path += "?" + parsed.query
    return host, port, path


def http_post(
    url: str,
    body: bytes,
    timeout: float = 10.0,
    content_type: str = SOAP_CONTENT_TYPE,
) -> HttpExchange:
    """One-shot POST; the timeout bounds connect and response reading."""
    host, port, path = _split_url(url)
    conn = http.client.HTTPConnection(host, port, timeout=timeout)
    try:
        try:
            conn.request("POST", path, body=body,
                         headers={"Content-Type": content_type})
        except (ConnectionRefusedError, ConnectionResetError, OSError) as exc:
            if isinstance(exc, socket.timeout):
                raise Timeout(f"POST {url} timed out") from exc
            raise ConnectFailure(f"could not connect to {url}: {exc}") from exc
        return _read_response(conn, url)
    finally:
        conn.close()


def _read_response(conn: http.client.HTTPConnection, url: str) -> HttpExchange:
    try:
        response = conn.getresponse()
        payload = response.read()
    except socket.timeout as exc:
        raise Timeout(f"reading response from {url} timed out") from exc
    except http.client.HTTPException as exc:
        raise ProtocolError(f"bad HTTP response from {url}: {exc}") from exc
    except OSError as exc:
        raise ConnectFailure(f"connection to {url} failed: {exc}") from exc
    return HttpExchange(status=response.status, body=payload,
                        content_type=response.getheader("Content-Type", "") or "")


class HttpClientConnection:
    """Keep-alive POST client for repeated exchanges with one endpoint.

    Reconnects once per call if the pooled connection went stale.
    """

    def __init__(self, base_url: str, timeout: float = 10.0):
        self.host, self.port, _ = _split_url(base_url)
        self.timeout = timeout
        self._conn: http.client.HTTPConnection | None = None

    def post(self, path: str, body: bytes,
             content_type: str = SOAP_CONTENT_TYPE) -> HttpExchange:
        for attempt in (0, 1):
            if self._conn is None:
                self._conn = http.client.HTTPConnection(
                    self.host, self.port, timeout=self.timeout)
            try:
                self._conn.request("POST", path, body=body,
                                   headers={"Content-Type": content_type})
                return _read_response(self._conn, path)
            except (ConnectFailure, ProtocolError):
                self.close()
                if attempt == 1:
                    raise
            except (ConnectionRefusedError, ConnectionResetError,
                    http.client.HTTPException, OSError) as exc:
                self.close()
                if attempt == 1:
                    if isinstance(exc, socket.timeout):
                        raise Timeout(f"POST {path} timed out") from exc
                    raise ConnectFailure(
                        f"could not reach {self.host}:{self.port}: {exc}") from exc
        raise ConnectFailure(f"could not reach {self.host}:{self.port}")

    def close(self):
        if self._conn is not None:
            self._conn.close()
            self._conn = None
