"""Benchmark engine: timed invocation loops, statistics, CSV.

Methodology: discovery and metadata happen once, before any timer
starts. Then `concurrency` independent loops each issue `n` sequential
invocations; a sample is the wall time from just before the request is
built to just after the response value is decoded. Failed invocations
count as errors and contribute no sample. Statistics always come from
the full merged series; percentile uses linear interpolation between
closest ranks.

Reference figures from the original embedded evaluation (720 MHz ARM
target, 500 requests): mean 24.44 ms, 12.22 s total, CPU around
90.4-96.7 %, reported memory 26440 bytes (the unit is implausibly
small for a process footprint and is echoed as published).
"""
from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass

REFERENCE_MEAN_MS = 24.44
REFERENCE_TOTAL_S = 12.22
REFERENCE_REQUESTS = 500
REFERENCE_CPU_PERCENTS = (90.4, 91.9, 96.7)
REFERENCE_MEMORY_BYTES = 26440

DEFAULT_REQUESTS = 500
DEFAULT_CONCURRENCY = 1
RESOURCE_CADENCE = 0.2

CSV_HEADER = "index,start_unix_ns,latency_ms,status"


@dataclass(frozen=True)
class BenchSample:
    """One successful invocation."""

    loop: int
    start_unix_ns: int
    latency_ms: float


@dataclass(frozen=True)
class BenchError:
    loop: int
    start_unix_ns: int
    message: str


@dataclass(frozen=True)
class ResourceSample:
    timestamp: float
    rss_bytes: int
    cpu_percent: float


@dataclass(frozen=True)
class BenchReport:
    """The full result of one bench run.

    request_count is the attempted total (n x concurrency); the
    latency series holds one entry per success, so its length is
    request_count - errors.
    """

    request_count: int
    errors: int
    total_duration_s: float
    samples: tuple[BenchSample, ...]
    error_details: tuple[BenchError, ...] = ()
    resources: tuple[ResourceSample, ...] = ()
    resource_notice: str = ""

    @property
    def latencies_ms(self) -> tuple[float, ...]:
        return tuple(sample.latency_ms for sample in self.samples)

    @property
    def mean_ms(self) -> float:
        return sum(self.latencies_ms) / len(self.samples)

    @property
    def median_ms(self) -> float:
        return percentile(self.latencies_ms, 50.0)

    @property
    def p90_ms(self) -> float:
        return percentile(self.latencies_ms, 90.0)

    @property
    def p99_ms(self) -> float:
        return percentile(self.latencies_ms, 99.0)

    @property
    def min_ms(self) -> float:
        return min(self.latencies_ms)

    @property
    def max_ms(self) -> float:
        return max(self.latencies_ms)

    @property
    def throughput_rps(self) -> float:
        return self.request_count / self.total_duration_s


def percentile(values, p: float) -> float:
    """Linear interpolation between closest ranks over sorted values;
    the convention shared by mainstream numeric libraries."""
    if not values:
        raise ValueError("percentile of an empty series")
    if not 0.0 <= p <= 100.0:
        raise ValueError(f"percentile {p!r} outside [0, 100]")
    ordered = sorted(values)
    rank = (len(ordered) - 1) * (p / 100.0)
    lower = math.floor(rank)
    upper = math.ceil(rank)
    if lower == upper:
        return ordered[lower]
    weight = rank - lower
    return ordered[lower] * (1.0 - weight) + ordered[upper] * weight


class ResourceSampler(threading.Thread):
    """Samples resident memory and CPU of one local process on a fixed
    cadence for the duration of the bench."""

    def __init__(self, pid: int, cadence: float = RESOURCE_CADENCE):
        super().__init__(daemon=True)
        import psutil
        self._process = psutil.Process(pid)
        self._psutil = psutil
        self.cadence = cadence
        self.samples: list[ResourceSample] = []
        self._halt = threading.Event()
        self._process.cpu_percent(None)

    def run(self):
        while not self._halt.wait(self.cadence):
            try:
                memory = self._process.memory_info().rss
                cpu = self._process.cpu_percent(None)
            except self._psutil.Error:
                break
            self.samples.append(ResourceSample(
                timestamp=time.time(), rss_bytes=memory, cpu_percent=cpu))

    def stop(self) -> tuple[ResourceSample, ...]:
        self._halt.set()
        self.join(timeout=2.0)
        return tuple(self.samples)


def run_bench(
    invoke,
    n: int = DEFAULT_REQUESTS,
    concurrency: int = DEFAULT_CONCURRENCY,
    pid: int | None = None,
) -> BenchReport:
    """Run the measurement loops against a prepared invoke() callable.

    invoke is called with no arguments once per request and either
    returns (success) or raises (error). Setup work (discovery,
    metadata) must already be done by the caller so no setup cost
    lands in any sample.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if concurrency < 1:
        raise ValueError("concurrency must be at least 1")
    samples: list[BenchSample] = []
    errors: list[BenchError] = []
    collect = threading.Lock()

    def loop(loop_id: int):
        local_samples = []
        local_errors = []
        for _ in range(n):
            start_unix_ns = time.time_ns()
            begin = time.perf_counter_ns()
            try:
                invoke()
            except Exception as exc:
                local_errors.append(BenchError(
                    loop=loop_id, start_unix_ns=start_unix_ns,
                    message=str(exc) or type(exc).__name__))
                continue
            elapsed_ns = time.perf_counter_ns() - begin
            local_samples.append(BenchSample(
                loop=loop_id, start_unix_ns=start_unix_ns,
                latency_ms=elapsed_ns / 1e6))
        with collect:
            samples.extend(local_samples)
            errors.extend(local_errors)

    sampler: ResourceSampler | None = None
    notice = ""
    if pid is not None:
        try:
            sampler = ResourceSampler(pid)
            sampler.start()
        except Exception as exc:
            sampler = None
            notice = f"resource series omitted: process {pid} not observable ({exc})"
    else:
        notice = "resource series omitted: no --pid given (remote or unknown target)"

    bench_begin = time.perf_counter()
    if concurrency == 1:
        loop(0)
    else:
        threads = [threading.Thread(target=loop, args=(i,), daemon=True)
                   for i in range(concurrency)]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()
    total_duration = time.perf_counter() - bench_begin

    resources: tuple[ResourceSample, ...] = ()
    if sampler is not None:
        resources = sampler.stop()
    samples.sort(key=lambda s: s.start_unix_ns)
    errors.sort(key=lambda e: e.start_unix_ns)
    return BenchReport(
        request_count=n * concurrency,
        errors=len(errors),
        total_duration_s=total_duration,
        samples=tuple(samples),
        error_details=tuple(errors),
        resources=resources,
        resource_notice=notice,
    )


def write_csv(report: BenchReport, path: str):
    """One row per successful request: index,start_unix_ns,latency_ms,status.

    Latencies are written with repr precision so statistics recomputed
    from the file match the in-memory report exactly.
    """
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(CSV_HEADER + "\n")
        for index, sample in enumerate(report.samples):
            handle.write(
                f"{index},{sample.start_unix_ns},{sample.latency_ms!r},ok\n")


def render_report(report: BenchReport) -> str:
    """Human-readable report with the embedded-target reference line."""
    lines = [
        f"requests:    {report.request_count} "
        f"({len(report.samples)} ok, {report.errors} errors)",
        f"total:       {report.total_duration_s:.3f} s",
        f"throughput:  {report.throughput_rps:.1f} req/s",
    ]
    if report.samples:
        lines += [
            f"mean:        {report.mean_ms:.3f} ms",
            f"median:      {report.median_ms:.3f} ms",
            f"p90:         {report.p90_ms:.3f} ms",
            f"p99:         {report.p99_ms:.3f} ms",
            f"min:         {report.min_ms:.3f} ms",
            f"max:         {report.max_ms:.3f} ms",
        ]
    if report.resources:
        peak = max(sample.rss_bytes for sample in report.resources)
        busiest = max(sample.cpu_percent for sample in report.resources)
        lines += [
            f"memory peak: {peak} bytes resident "
            f"({len(report.resources)} samples)",
            f"cpu peak:    {busiest:.1f} %",
        ]
    elif report.resource_notice:
        lines.append(report.resource_notice)
    lines += [
        "",
        f"reference (embedded 720 MHz ARM target): mean {REFERENCE_MEAN_MS} ms, "
        f"{REFERENCE_REQUESTS} requests in {REFERENCE_TOTAL_S} s",
        f"reference resources: CPU "
        f"{', '.join(f'{c}%' for c in REFERENCE_CPU_PERCENTS)}; memory "
        f"{REFERENCE_MEMORY_BYTES} bytes as published (unit likely "
        "understated; see README)",
    ]
    return "\n".join(lines)
