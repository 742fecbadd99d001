"""Run statistics: windowed throughput/violation series and per-job records.

Violations are counted per request: a dropped job contributes all of its
requests, and a job finishing past its deadline counts as violated while
still reporting its achieved accuracy.  Window attribution: completions by
completion time, violations and totals by arrival time, so per-window ratios
stay in [0, 1].
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

_METRICS_FORMAT = "modserve-metrics"
_METRICS_VERSION = 1


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class JobRecord:
    id: int
    arrival_us: int
    size: int
    accuracy_slo: float
    achieved_accuracy: float | None  # None for dropped jobs
    completion_us: int | None
    dropped: bool
    violated: bool

    @property
    def jct_us(self) -> int | None:
        if self.completion_us is None:
            return None
        return self.completion_us - self.arrival_us


@dataclass(frozen=True)
class MetricsLog:
    window_us: int
    records: tuple[JobRecord, ...]

    @property
    def total_requests(self) -> int:
        return sum(r.size for r in self.records)

    @property
    def completed_requests(self) -> int:
        return sum(r.size for r in self.records if not r.dropped)

    @property
    def violated_requests(self) -> int:
        return sum(r.size for r in self.records if r.violated)

    def violation_ratio(self) -> float:
        total = self.total_requests
        return self.violated_requests / total if total else 0.0

    def mean_job_accuracy(self) -> float:
        accs = [r.achieved_accuracy for r in self.records if r.achieved_accuracy is not None]
        return float(np.mean(accs)) if accs else float("nan")


@dataclass(frozen=True)
class WindowStats:
    window: int
    throughput: int       # requests completed in the window
    violated: int         # requests of violated jobs that arrived in the window
    arrived: int          # requests that arrived in the window

    @property
    def violation_ratio(self) -> float:
        return self.violated / self.arrived if self.arrived else 0.0


def window_stats(log: MetricsLog) -> list[WindowStats]:
    """Per-window throughput and violation ratio over the whole run."""
    if not log.records:
        return []
    horizon = 0
    for r in log.records:
        horizon = max(horizon, r.arrival_us, r.completion_us or 0)
    n_windows = horizon // log.window_us + 1
    completed = [0] * n_windows
    violated = [0] * n_windows
    arrived = [0] * n_windows
    for r in log.records:
        arrived[r.arrival_us // log.window_us] += r.size
        if r.violated:
            violated[r.arrival_us // log.window_us] += r.size
        if r.completion_us is not None:
            completed[r.completion_us // log.window_us] += r.size
    return [WindowStats(i, completed[i], violated[i], arrived[i]) for i in range(n_windows)]


@dataclass(frozen=True)
class Summary:
    minimum: float
    q25: float
    median: float
    mean: float
    q75: float
    maximum: float


def summarize(series) -> Summary:
    """Five-number-plus-mean summary; quartiles by linear interpolation."""
    data = np.asarray(list(series), dtype=float)
    if data.size == 0:
        raise MetricsError("cannot summarize an empty series")
    return Summary(
        minimum=float(data.min()),
        q25=float(np.percentile(data, 25)),
        median=float(np.percentile(data, 50)),
        mean=float(data.mean()),
        q75=float(np.percentile(data, 75)),
        maximum=float(data.max()),
    )


def accuracy_histogram(log: MetricsLog, bins: int = 10) -> tuple[np.ndarray, np.ndarray, float]:
    """Histogram of achieved per-job accuracy over completed jobs, plus the
    overall mean.  Returns (counts, bin_edges, mean)."""
    accs = [r.achieved_accuracy for r in log.records if r.achieved_accuracy is not None]
    if not accs:
        return np.zeros(bins, dtype=int), np.linspace(0.0, 1.0, bins + 1), float("nan")
    counts, edges = np.histogram(accs, bins=bins)
    return counts, edges, float(np.mean(accs))


# --- persistence -------------------------------------------------------------

_WINDOW_HEADER = ["window", "throughput", "violation_ratio"]
_JOB_HEADER = ["id", "arrival_ms", "size", "accuracy_slo", "achieved_accuracy",
               "completion_ms", "jct_ms", "dropped", "violated"]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def export(log: MetricsLog, base: str | Path, fmt: str = "csv") -> list[Path]:
    """Write the log.

    ``csv`` writes ``<base>_windows.csv`` and ``<base>_jobs.csv``;
    ``json`` writes ``<base>.json``.  Both are lossless for the per-job
    table and deterministic byte-for-byte.
    """
    base = Path(base)
    base.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        windows_path = base.with_name(base.name + "_windows.csv")
        jobs_path = base.with_name(base.name + "_jobs.csv")
        with open(windows_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(_WINDOW_HEADER)
            for w in window_stats(log):
                writer.writerow([w.window, w.throughput, _fmt(w.violation_ratio)])
        with open(jobs_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(_JOB_HEADER)
            for r in log.records:
                writer.writerow([
                    r.id,
                    _fmt(r.arrival_us / 1000.0),
                    r.size,
                    _fmt(r.accuracy_slo),
                    _fmt(r.achieved_accuracy),
                    _fmt(None if r.completion_us is None else r.completion_us / 1000.0),
                    _fmt(None if r.jct_us is None else r.jct_us / 1000.0),
                    _fmt(r.dropped),
                    _fmt(r.violated),
                ])
        return [windows_path, jobs_path]
    if fmt == "json":
        path = base.with_suffix(".json")
        doc = {
            "format": _METRICS_FORMAT,
            "version": _METRICS_VERSION,
            "window_us": log.window_us,
            "jobs": [asdict(r) for r in log.records],
        }
        path.write_text(json.dumps(doc, indent=1))
        return [path]
    raise MetricsError(f"unknown export format {fmt!r}")


def read_log(path: str | Path, window_us: int = 4_000_000) -> MetricsLog:
    """Re-load an exported log (the JSON document or the per-job CSV).

    The CSV form does not carry the window size; pass ``window_us`` when the
    run used a non-default window.
    """
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        if doc.get("format") != _METRICS_FORMAT or doc.get("version") != _METRICS_VERSION:
            raise MetricsError("not a metrics log file")
        records = tuple(JobRecord(**row) for row in doc["jobs"])
        return MetricsLog(window_us=int(doc["window_us"]), records=records)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != _JOB_HEADER:
            raise MetricsError(f"unexpected CSV header {header}")
        records = []
        for row in reader:
            vals = dict(zip(_JOB_HEADER, row))
            records.append(JobRecord(
                id=int(vals["id"]),
                arrival_us=round(float(vals["arrival_ms"]) * 1000),
                size=int(vals["size"]),
                accuracy_slo=float(vals["accuracy_slo"]),
                achieved_accuracy=float(vals["achieved_accuracy"]) if vals["achieved_accuracy"] else None,
                completion_us=round(float(vals["completion_ms"]) * 1000) if vals["completion_ms"] else None,
                dropped=vals["dropped"] == "1",
                violated=vals["violated"] == "1",
            ))
    return MetricsLog(window_us=window_us, records=tuple(records))
