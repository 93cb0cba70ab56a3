"""Shared fixtures and the acceptance-result summary hook."""

import contextlib
import os
import signal
import socket
import subprocess
import tempfile
import threading
import uuid

import pytest

from dpws import (
    Device,
    DeviceConfig,
    EventSourceDefinition,
    OperationDefinition,
    ServiceDefinition,
    ThisDevice,
    ThisModel,
)

# Populated by tests/test_acceptance.py; printed one line per criterion
# at the end of the run so the verdicts survive output capture.
ACCEPTANCE_RESULTS: dict[int, tuple[str, bool, str]] = {}


def record_criterion(number: int, title: str, passed: bool, detail: str = ""):
    ACCEPTANCE_RESULTS[number] = (title, passed, detail)


@contextlib.contextmanager
def criterion(number: int, title: str):
    """Record PASS on clean exit, FAIL on any exception, then re-raise."""
    try:
        yield
    except BaseException as exc:
        record_criterion(number, title, False, f"{type(exc).__name__}: {exc}")
        raise
    else:
        record_criterion(number, title, True)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        title, passed, detail = ACCEPTANCE_RESULTS[number]
        verdict = "PASS" if passed else "FAIL"
        line = f"criterion {number}: {verdict} - {title}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)


def free_port() -> int:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


def make_temperature_service() -> ServiceDefinition:
    """Sensor service exercised throughout the suite: three operations
    over int readings plus one event source."""
    readings = iter(range(1, 10**9))

    def get_temperature(value, cb):
        cb(None, 0)

    def next_reading(value, cb):
        cb(None, next(readings))

    def echo(value, cb):
        cb(None, value)

    return ServiceDefinition(
        service_id="sensor",
        types={"temperature": "int", "text": "string"},
        operations=(
            OperationDefinition("GetTemperature", get_temperature,
                                input=None, output="temperature"),
            OperationDefinition("NextReading", next_reading,
                                input=None, output="temperature"),
            OperationDefinition("Echo", echo, input="text", output="text"),
        ),
        events=(EventSourceDefinition("TemperatureChanged", payload="temperature"),),
    )


def make_device_config(port: int | None = None, **overrides) -> DeviceConfig:
    defaults = dict(
        address=str(uuid.uuid4()),
        this_model=ThisModel(manufacturer="ACME Instruments",
                             model_name="Thermo 100"),
        this_device=ThisDevice(friendly_name="Lab thermometer"),
        http_port=port if port is not None else free_port(),
    )
    defaults.update(overrides)
    return DeviceConfig(**defaults)


@pytest.fixture
def running_device():
    """A started device hosting the temperature service, torn down after
    the test."""
    device = Device(make_device_config())
    device.add_service(make_temperature_service())
    device.start()
    try:
        yield device
    finally:
        device.stop()


class DpwsdProcess:
    """A dpwsd child process driven through its console script.

    Readiness is the first `dpwsd: service` line; transport addresses
    are collected from the `dpwsd: listening at` lines before it.
    """

    def __init__(self, config_text: str, port: int | None = None,
                 extra_env: dict | None = None):
        self.port = port if port is not None else free_port()
        fd, self.config_path = tempfile.mkstemp(suffix=".yaml")
        with os.fdopen(fd, "w") as handle:
            handle.write(config_text)
        env = dict(os.environ)
        if extra_env:
            env.update(extra_env)
        self.proc = subprocess.Popen(
            ["dpwsd", "--config", self.config_path, "--port", str(self.port)],
            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True, env=env)
        self.lines: list[str] = []
        self.xaddrs: list[str] = []
        self.stderr = ""
        self._ready = threading.Event()
        self._started_ok = False
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self):
        for raw in self.proc.stdout:
            line = raw.rstrip("\n")
            self.lines.append(line)
            if line.startswith("dpwsd: listening at "):
                self.xaddrs.append(line[len("dpwsd: listening at "):])
            if line.startswith("dpwsd: service "):
                self._started_ok = True
                self._ready.set()
        # EOF unblocks waiters when startup fails before any service line.
        self._ready.set()

    def wait_ready(self, timeout: float = 10.0) -> bool:
        return self._ready.wait(timeout) and self._started_ok

    @property
    def loopback_xaddr(self) -> str:
        return next(x for x in self.xaddrs if "127.0.0.1" in x)

    def stop(self, sig=signal.SIGINT, timeout: float = 10.0) -> int:
        if self.proc.poll() is None:
            self.proc.send_signal(sig)
        try:
            self.proc.wait(timeout=timeout)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()
        self._reader.join(timeout=2.0)
        self.stderr = self.proc.stderr.read()
        self.proc.stderr.close()
        self.proc.stdout.close()
        try:
            os.unlink(self.config_path)
        except OSError:
            pass
        return self.proc.returncode
