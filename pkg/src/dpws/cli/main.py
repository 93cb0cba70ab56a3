"""dpws: probe the network, inspect devices, invoke operations,
subscribe to events and benchmark.

    dpws probe [--type QNAME]... [--scope IRI]... [--timeout MS]
    dpws get XADDR
    dpws invoke XADDR --service ID --op NAME [--input VALUE]
    dpws subscribe XADDR --service ID --event NAME [--count N] [--duration S]
    dpws bench (XADDR | --probe-type QNAME) [--n 500] [--concurrency 1]
               --op NAME --out report.csv [--service ID] [--input VALUE]
               [--pid PID]

QNAME arguments use Clark notation: {namespace}Local. Exit codes:
0 ok, 2 usage or configuration error, 3 network or remote failure,
4 bench completed with errors.
"""
from __future__ import annotations

import argparse
import logging
import sys
import threading

from ..client import DpwsClient, RemoteService
from ..errors import DpwsError, FaultReceived, InvalidConfig, TypeMismatch
from ..primitives import decode_value
from ..xmlcodec import QName
from . import bench as bench_mod
from .report import render_figures

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NETWORK = 3
EXIT_BENCH_ERRORS = 4


class UsageError(Exception):
    """A bad argument combination detected after parsing."""


def _parse_qname(text: str) -> QName:
    try:
        qname = QName.parse(text)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not qname.namespace:
        raise UsageError(
            f"type {text!r} needs Clark notation {{namespace}}Local")
    return qname


def _timeout_seconds(ms: int) -> float:
    if ms <= 0:
        raise UsageError(f"--timeout must be positive, got {ms}")
    return ms / 1000.0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpws", description="Device discovery, inspection, invocation "
        "and benchmarking.")
    parser.add_argument("--verbose", action="store_true",
                        help="log protocol activity to stderr")
    commands = parser.add_subparsers(dest="command", required=True)

    probe = commands.add_parser("probe", help="multicast a Probe and list "
                                "matching devices")
    probe.add_argument("--type", action="append", default=[], metavar="QNAME",
                       help="require this type (Clark notation; repeatable)")
    probe.add_argument("--scope", action="append", default=[], metavar="IRI",
                       help="require this scope (repeatable)")
    probe.add_argument("--timeout", type=int, default=4000, metavar="MS",
                       help="listen window in milliseconds (default 4000)")

    get = commands.add_parser("get", help="fetch and print device metadata")
    get.add_argument("xaddr", help="device transport address")
    get.add_argument("--timeout", type=int, default=10000, metavar="MS")

    invoke = commands.add_parser("invoke", help="invoke one operation")
    invoke.add_argument("xaddr", help="device transport address")
    invoke.add_argument("--service", required=True, metavar="ID")
    invoke.add_argument("--op", required=True, metavar="NAME")
    invoke.add_argument("--input", default=None, metavar="VALUE")
    invoke.add_argument("--timeout", type=int, default=10000, metavar="MS")

    subscribe = commands.add_parser("subscribe", help="subscribe to an event "
                                    "and print notifications")
    subscribe.add_argument("xaddr", help="device transport address")
    subscribe.add_argument("--service", required=True, metavar="ID")
    subscribe.add_argument("--event", required=True, metavar="NAME")
    subscribe.add_argument("--count", type=int, default=None, metavar="N",
                           help="exit after N notifications")
    subscribe.add_argument("--duration", type=float, default=None, metavar="S",
                           help="exit after S seconds")
    subscribe.add_argument("--expires", type=float, default=None, metavar="S",
                           help="requested subscription expiry in seconds")

    bench = commands.add_parser("bench", help="run the timed invocation loop")
    bench.add_argument("xaddr", nargs="?", default=None,
                       help="device transport address")
    bench.add_argument("--probe-type", default=None, metavar="QNAME",
                       help="discover the target by type instead of xaddr")
    bench.add_argument("--n", type=int, default=bench_mod.DEFAULT_REQUESTS,
                       help="requests per loop (default 500)")
    bench.add_argument("--concurrency", type=int,
                       default=bench_mod.DEFAULT_CONCURRENCY,
                       help="independent sequential loops (default 1)")
    bench.add_argument("--op", required=True, metavar="NAME")
    bench.add_argument("--service", default=None, metavar="ID",
                       help="service id (default: the one service "
                       "declaring the operation)")
    bench.add_argument("--input", default=None, metavar="VALUE")
    bench.add_argument("--out", required=True, metavar="PATH",
                       help="per-request CSV path; figures render alongside")
    bench.add_argument("--pid", type=int, default=None,
                       help="local device process to sample for the "
                       "resource series")
    bench.add_argument("--timeout", type=int, default=10000, metavar="MS")
    return parser


def _open_device(client: DpwsClient, xaddr: str, timeout: float):
    return client.open(xaddr, timeout=timeout)


def _find_service(device, service_id: str | None, op_name: str | None) \
        -> RemoteService:
    if service_id is not None:
        service = device.service(service_id)
        if service is None:
            raise UsageError(
                f"device hosts no service {service_id!r} "
                f"(available: {', '.join(s.service_id for s in device.services) or 'none'})")
        return service
    candidates = [s for s in device.services
                  if s.description.operation(op_name) is not None]
    if not candidates:
        raise UsageError(f"no service declares operation {op_name!r}")
    if len(candidates) > 1:
        raise UsageError(
            f"operation {op_name!r} is ambiguous across services: "
            f"{', '.join(s.service_id for s in candidates)}; pass --service")
    return candidates[0]


def _decode_cli_input(service: RemoteService, op_name: str, text: str | None):
    op = service.description.operation(op_name)
    if op is None:
        raise UsageError(f"service {service.service_id!r} has no operation "
                         f"{op_name!r}")
    if text is None:
        return None
    if op.input is None:
        raise UsageError(f"operation {op_name!r} declares no input")
    primitive = service.description.primitive_of(op.input)
    try:
        return decode_value(primitive, text, where=f"--input for {op_name!r}")
    except TypeMismatch as exc:
        raise UsageError(str(exc)) from None


def cmd_probe(args) -> int:
    client = DpwsClient()
    types = tuple(_parse_qname(t) for t in args.type)
    found = client.discover(types=types, scopes=tuple(args.scope),
                            timeout=_timeout_seconds(args.timeout))
    for device in found:
        adv = device.advertisement
        print(f"{adv.epr.address} metadata_version={adv.metadata_version}")
        if adv.types:
            print(f"  types:  {' '.join(str(t) for t in adv.types)}")
        if adv.scopes:
            print(f"  scopes: {' '.join(adv.scopes)}")
        for xaddr in adv.xaddrs:
            print(f"  xaddr:  {xaddr}")
    print(f"{len(found)} device(s)", file=sys.stderr)
    return EXIT_OK


def cmd_get(args) -> int:
    client = DpwsClient()
    device = _open_device(client, args.xaddr, _timeout_seconds(args.timeout))
    meta = device.metadata
    model = meta.this_model
    info = meta.this_device
    print(f"device:       {meta.relationship.host.address}")
    print(f"friendly:     {info.friendly_name}")
    if info.firmware_version:
        print(f"firmware:     {info.firmware_version}")
    if info.serial_number:
        print(f"serial:       {info.serial_number}")
    print(f"manufacturer: {model.manufacturer}")
    print(f"model:        {model.model_name} {model.model_number}".rstrip())
    if model.presentation_url:
        print(f"presentation: {model.presentation_url}")
    print(f"metadata_version: {meta.metadata_version}")
    for service in device.services:
        print(f"service {service.service_id} at {service.epr.address}")
        for name, input_type, output_type in service.operations:
            signature = f"({input_type or ''})"
            arrow = f" -> {output_type}" if output_type else ""
            print(f"  operation {name}{signature}{arrow}")
        for event in service.events:
            payload = service.description.event(event).payload
            print(f"  event {event} ({payload})")
    return EXIT_OK


def cmd_invoke(args) -> int:
    client = DpwsClient()
    timeout = _timeout_seconds(args.timeout)
    device = _open_device(client, args.xaddr, timeout)
    service = _find_service(device, args.service, args.op)
    value = _decode_cli_input(service, args.op, args.input)
    result = client.invoke(service, args.op, input=value, timeout=timeout)
    if result is not None:
        print(result if not isinstance(result, bool)
              else ("true" if result else "false"))
    return EXIT_OK


def cmd_subscribe(args) -> int:
    client = DpwsClient()
    device = _open_device(client, args.xaddr, 10.0)
    service = _find_service(device, args.service, None)
    done = threading.Event()
    seen = [0]

    def on_notification(notification):
        print(f"seq={notification.sequence_number} "
              f"event={notification.event} value={notification.value}",
              flush=True)
        seen[0] += 1
        if args.count is not None and seen[0] >= args.count:
            done.set()

    def on_end(status, reason):
        print(f"subscription ended: {status} {reason}".rstrip(), flush=True)
        done.set()

    subscription = client.subscribe(service, args.event, on_notification,
                                    expires=args.expires, on_end=on_end)
    print(f"subscribed to {args.event} for {subscription.granted:g}s",
          flush=True)
    try:
        done.wait(timeout=args.duration)
    except KeyboardInterrupt:
        pass
    if not subscription.ended:
        try:
            subscription.unsubscribe()
        except DpwsError:
            pass
    client.close()
    return EXIT_OK


def cmd_bench(args) -> int:
    if (args.xaddr is None) == (args.probe_type is None):
        raise UsageError("pass exactly one of XADDR or --probe-type")
    if args.n < 1 or args.concurrency < 1:
        raise UsageError("--n and --concurrency must be at least 1")
    client = DpwsClient()
    timeout = _timeout_seconds(args.timeout)
    if args.xaddr is not None:
        device = _open_device(client, args.xaddr, timeout)
    else:
        found = client.discover(types=(_parse_qname(args.probe_type),))
        if not found:
            print("dpws bench: no device matched the probe", file=sys.stderr)
            return EXIT_NETWORK
        device = client.open(found[0])
    service = _find_service(device, args.service, args.op)
    value = _decode_cli_input(service, args.op, args.input)
    client.invoke(service, args.op, input=value, timeout=timeout)

    def one_request():
        client.invoke(service, args.op, input=value, timeout=timeout)

    report = bench_mod.run_bench(one_request, n=args.n,
                                 concurrency=args.concurrency, pid=args.pid)
    bench_mod.write_csv(report, args.out)
    figures = render_figures(report, args.out)
    print(bench_mod.render_report(report))
    print(f"\ncsv: {args.out}")
    for figure in figures:
        print(f"figure: {figure}")
    if report.errors:
        for detail in report.error_details[:5]:
            print(f"error (loop {detail.loop}): {detail.message}",
                  file=sys.stderr)
        return EXIT_BENCH_ERRORS
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    handlers = {
        "probe": cmd_probe,
        "get": cmd_get,
        "invoke": cmd_invoke,
        "subscribe": cmd_subscribe,
        "bench": cmd_bench,
    }
    try:
        return handlers[args.command](args)
    except UsageError as exc:
        print(f"dpws {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvalidConfig as exc:
        print(f"dpws {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FaultReceived as exc:
        print(f"dpws {args.command}: remote fault: {exc}", file=sys.stderr)
        return EXIT_NETWORK
    except DpwsError as exc:
        print(f"dpws {args.command}: {exc}", file=sys.stderr)
        return EXIT_NETWORK
    except KeyboardInterrupt:
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
