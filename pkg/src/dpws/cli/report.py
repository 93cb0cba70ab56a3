"""Figure rendering for bench reports.

Alongside the CSV, the report path gains three figures (PNG, headless
Agg backend): the latency series over request index, a latency
histogram, and, when a resource series was sampled, memory and CPU
over the run.
"""
from __future__ import annotations

import os

from .bench import BenchReport


def _style(ax, title: str, xlabel: str, ylabel: str):
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)


def render_figures(report: BenchReport, csv_path: str) -> list[str]:
    """Render figures next to the CSV; returns the files written."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    base, _ = os.path.splitext(csv_path)
    written = []

    if report.samples:
        latencies = report.latencies_ms
        fig, ax = plt.subplots(figsize=(8, 4.5))
        ax.plot(range(len(latencies)), latencies, linewidth=0.8)
        ax.axhline(report.mean_ms, linestyle="--", linewidth=1,
                   label=f"mean {report.mean_ms:.2f} ms")
        _style(ax, "Per-request latency", "request index", "latency (ms)")
        ax.legend()
        fig.tight_layout()
        series_path = f"{base}_latency.png"
        fig.savefig(series_path, dpi=110)
        plt.close(fig)
        written.append(series_path)

        fig, ax = plt.subplots(figsize=(8, 4.5))
        ax.hist(latencies, bins=min(50, max(5, len(latencies) // 10)))
        ax.axvline(report.p99_ms, linestyle="--", linewidth=1,
                   label=f"p99 {report.p99_ms:.2f} ms")
        _style(ax, "Latency distribution", "latency (ms)", "requests")
        ax.legend()
        fig.tight_layout()
        hist_path = f"{base}_hist.png"
        fig.savefig(hist_path, dpi=110)
        plt.close(fig)
        written.append(hist_path)

    if report.resources:
        start = report.resources[0].timestamp
        times = [sample.timestamp - start for sample in report.resources]
        fig, (mem_ax, cpu_ax) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
        mem_ax.plot(times, [s.rss_bytes / 1024.0 for s in report.resources])
        _style(mem_ax, "Resident memory", "", "KiB")
        cpu_ax.plot(times, [s.cpu_percent for s in report.resources])
        _style(cpu_ax, "CPU utilization", "seconds into run", "%")
        fig.tight_layout()
        resources_path = f"{base}_resources.png"
        fig.savefig(resources_path, dpi=110)
        plt.close(fig)
        written.append(resources_path)

    return written
