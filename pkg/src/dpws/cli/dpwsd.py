"""dpwsd: host a device described by a configuration file.

    dpwsd --config device.yaml [--port N]

Runs until SIGINT or SIGTERM, then announces Bye, ends subscriptions,
drains in-flight requests and exits 0. Exit codes: 2 configuration
error, 3 bind or discovery failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import signal
import sys
import threading

from ..device import Device
from ..errors import BindFailure, DiscoveryStartFailure, DpwsError, InvalidConfig
from .config import HostPlan, load_config

log = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpwsd", description="Host a device from a declarative "
        "configuration file.")
    parser.add_argument("--config", required=True, metavar="PATH",
                        help="device configuration file (YAML)")
    parser.add_argument("--port", type=int, default=None, metavar="N",
                        help="override the configured HTTP port")
    parser.add_argument("--verbose", action="store_true",
                        help="log protocol activity to stderr")
    return parser


class _Emitter(threading.Thread):
    """Periodically evaluates an event behavior and emits the value."""

    def __init__(self, device: Device, plan_emit, stop_event: threading.Event):
        super().__init__(daemon=True)
        self.device = device
        self.emit = plan_emit
        self.stop_event = stop_event

    def run(self):
        while not self.stop_event.wait(self.emit.every):
            holder = []
            try:
                self.emit.behavior(None, lambda err, value=None:
                                   holder.append((err, value)))
                if not holder or holder[0][0] is not None:
                    continue
                self.device.emit(self.emit.service_id, self.emit.event,
                                 holder[0][1])
            except DpwsError as exc:
                log.warning("periodic emit %s/%s failed: %s",
                            self.emit.service_id, self.emit.event, exc)


def run(plan: HostPlan, ready_line=print) -> int:
    device = Device(plan.config)
    for service in plan.services:
        device.add_service(service)
    try:
        device.start()
    except (BindFailure, DiscoveryStartFailure) as exc:
        print(f"dpwsd: {exc}", file=sys.stderr)
        return 3
    stop_event = threading.Event()

    def on_signal(signum, _frame):
        log.info("signal %s, shutting down", signum)
        stop_event.set()

    signal.signal(signal.SIGINT, on_signal)
    signal.signal(signal.SIGTERM, on_signal)
    for plan_emit in plan.emits:
        _Emitter(device, plan_emit, stop_event).start()
    ready_line(f"dpwsd: device {plan.config.address} pid {os.getpid()}")
    for xaddr in device.xaddrs:
        ready_line(f"dpwsd: listening at {xaddr}")
    for service_id in device.services:
        ready_line(f"dpwsd: service {service_id}")
    sys.stdout.flush()
    try:
        stop_event.wait()
    except KeyboardInterrupt:
        pass
    device.stop()
    ready_line("dpwsd: stopped")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        plan = load_config(args.config, port_override=args.port)
    except InvalidConfig as exc:
        print(f"dpwsd: {exc}", file=sys.stderr)
        return 2
    return run(plan)


if __name__ == "__main__":
    sys.exit(main())
