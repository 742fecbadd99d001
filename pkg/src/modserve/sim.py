"""Deterministic discrete-event simulation of the serving pipeline.

One monitor (the scheduler) and one worker share an EDF queue.  Arrivals are
admitted with their highest-accuracy strategy; reassignment passes run in
virtual time (the optimizer charge) and overlap job execution, landing only
at their completion; the worker executes a job's batches back to back with an
actual latency of ``predicted * discrepancy`` and feeds the observation back
into the scheduler's correction factor.

Everything is integer microseconds inside, and every source of randomness is
seeded, so runs are exactly reproducible.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .metrics import JobRecord, MetricsLog
from .profile import ModelProfile
from .scheduler import (
    Candidate, FeedbackState, Job, JobQueue, JobState, Policy, apply_policy,
    candidates_with_rounding, next_dispatch, update_latency_feedback,
)
from .strategy import (
    StrategyMatrix, all_modalities_strategy, build_matrix, effective_accuracy,
    recommended_alphas, strategy_latency_us,
)

MS = 1000  # microseconds per millisecond


class SimError(ValueError):
    pass


class WorkloadError(ValueError):
    pass


@dataclass(frozen=True)
class JobTemplate:
    """One scripted or generated arrival."""

    arrival_us: int
    size: int
    accuracy_slo: float
    deadline_us: int


@dataclass(frozen=True)
class WorkloadSpec:
    """Synthetic workload description.

    ``constant`` holds the per-second request rate fixed; ``trace`` maps a
    request-count trace onto [min_qps, max_qps].  Per second, job sizes are
    drawn from round(max(1, Normal(mean, sd))) until they cover the second's
    request budget exactly (the last job is truncated), arrivals spread
    uniformly inside the second.  Accuracy floors are uniform over the
    profile's combo-accuracy range unless overridden.
    """

    kind: str = "constant"                 # "constant" | "trace"
    qps: float = 10.0
    trace_path: str | None = None
    min_qps: int = 5
    max_qps: int = 60
    duration_s: int = 60
    size_mean: float = 1.0
    size_sd: float = 6.0
    accuracy_range: tuple[float, float] | None = None
    deadline_ms: float = 1000.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("constant", "trace"):
            raise WorkloadError(f"unknown workload kind {self.kind!r}")
        if self.duration_s <= 0:
            raise WorkloadError("duration must be positive")
        if self.deadline_ms <= 0:
            raise WorkloadError("deadline offset must be positive")
        if self.kind == "trace":
            if self.trace_path is None:
                raise WorkloadError("trace workload needs a trace file")
            if self.min_qps > self.max_qps:
                raise WorkloadError("min_qps must not exceed max_qps")


def load_trace(path: str | Path) -> list[tuple[float, float]]:
    """Parse a request trace: one ``epoch_seconds,count`` record per line,
    ``#`` starts a comment."""
    records = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            epoch, count = line.split(",")
            records.append((float(epoch), float(count)))
        except ValueError:
            raise WorkloadError(f"{path}:{lineno}: expected 'epoch_seconds,count'") from None
    if not records:
        raise WorkloadError(f"{path}: empty trace")
    records.sort()
    return records


def map_trace_to_qps(counts, min_qps: int, max_qps: int) -> list[int]:
    """Affine map from trace counts onto the [min_qps, max_qps] range.

    A constant trace maps to min_qps.
    """
    counts = list(counts)
    if not counts:
        raise WorkloadError("empty trace")
    if any(c < 0 for c in counts):
        raise WorkloadError("trace counts must be non-negative")
    lo, hi = min(counts), max(counts)
    if hi == lo:
        return [int(min_qps)] * len(counts)
    span = max_qps - min_qps
    return [int(round(min_qps + (c - lo) * span / (hi - lo))) for c in counts]


def _resample(times, values, duration_s: int) -> list[float]:
    """Per-second series over the run, linearly interpolated from the trace's
    native granularity; seconds beyond the trace clamp to its last value."""
    t0 = times[0]
    xs = np.array([t - t0 for t in times])
    return list(np.interp(np.arange(duration_s, dtype=float), xs, np.array(values)))


def _draw_sizes(rng: np.random.Generator, budget: int, mean: float, sd: float) -> list[int]:
    """Job sizes covering ``budget`` requests exactly."""
    sizes = []
    remaining = budget
    while remaining > 0:
        draw = int(round(max(1.0, rng.normal(mean, sd))))
        sizes.append(min(draw, remaining))
        remaining -= sizes[-1]
    return sizes


def generate_jobs(spec: WorkloadSpec, profile: ModelProfile) -> list[JobTemplate]:
    """Deterministic arrival stream for a workload spec.

    Accuracy floors are quantized to 1e-4, matching the profile resolution.
    """
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "constant":
        per_second = [int(round(spec.qps))] * spec.duration_s
    else:
        trace = load_trace(spec.trace_path)
        qps = map_trace_to_qps([c for _, c in trace], spec.min_qps, spec.max_qps)
        per_second = [int(round(q)) for q in
                      _resample([t for t, _ in trace], qps, spec.duration_s)]
    acc_lo, acc_hi = spec.accuracy_range or (profile.min_accuracy, profile.max_accuracy)
    deadline_us = round(spec.deadline_ms * MS)

    jobs = []
    for sec, budget in enumerate(per_second):
        if budget <= 0:
            continue
        sizes = _draw_sizes(rng, budget, spec.size_mean, spec.size_sd)
        offsets = np.sort(rng.uniform(0.0, 1_000_000.0, size=len(sizes)))
        for size, offset in zip(sizes, offsets):
            arrival = sec * 1_000_000 + int(offset)
            slo = round(float(rng.uniform(acc_lo, acc_hi)), 4)
            jobs.append(JobTemplate(arrival, size, slo, arrival + deadline_us))
    return jobs


def load_scenario(path: str | Path) -> list[JobTemplate]:
    """Scripted arrivals: ``arrival_ms,size,accuracy_slo,deadline_ms`` per
    line, ``#`` comments."""
    jobs = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            arrival_ms, size, slo, deadline_ms = line.split(",")
            jobs.append(JobTemplate(
                arrival_us=round(float(arrival_ms) * MS),
                size=int(size),
                accuracy_slo=float(slo),
                deadline_us=round(float(deadline_ms) * MS),
            ))
        except ValueError:
            raise WorkloadError(
                f"{path}:{lineno}: expected 'arrival_ms,size,accuracy_slo,deadline_ms'"
            ) from None
    jobs.sort(key=lambda j: j.arrival_us)
    return jobs


def matrix_for_jobs(profile: ModelProfile, jobs, alphas=None) -> StrategyMatrix:
    """Build a matrix covering every job size in the stream."""
    max_size = max((j.size for j in jobs), default=1)
    if alphas is None:
        alphas = recommended_alphas(profile)
    return build_matrix(profile, range(1, max_size + 1), alphas)


@dataclass(frozen=True)
class SimConfig:
    """Everything one simulation run depends on."""

    profile: ModelProfile
    matrix: StrategyMatrix
    policy: Policy
    optimizer_overhead_ms: float = 70.0
    discrepancy: float = 1.0
    watermark: int = 2
    window_ms: float = 4000.0
    seed: int = 0

    def __post_init__(self):
        if self.optimizer_overhead_ms < 0:
            raise SimError("optimizer overhead must be >= 0")
        if not 0.2 <= self.discrepancy <= 2.5:
            raise SimError("discrepancy factor must lie in [0.2, 2.5]")
        if self.watermark < 1:
            raise SimError("watermark must be >= 1")
        if self.window_ms <= 0:
            raise SimError("metrics window must be positive")
        if self.matrix.profile_fingerprint != self.profile.fingerprint():
            raise SimError("matrix was built for a different profile")


# Event kinds, processed in (time, insertion) order.
_ARRIVAL = 0
_OPTIMIZE_DONE = 1
_BATCH_COMPLETE = 2
_METRICS_TICK = 3


class _Simulation:
    def __init__(self, config: SimConfig, templates: list[JobTemplate]):
        self.config = config
        self.queue = JobQueue()
        self.feedback = FeedbackState()
        self.rng = np.random.default_rng([config.seed, list(Policy).index(config.policy)])
        self.heap: list[tuple[int, int, int, object]] = []
        self.seq = 0
        self.live = 0  # pending non-tick events
        self.now = 0
        self.overhead_us = round(config.optimizer_overhead_ms * MS)
        self.window_us = round(config.window_ms * MS)
        self.optimize_done_at: int | None = None
        self.arrivals_since_opt = 0
        self.records: dict[int, JobRecord] = {}
        self.finished: list[JobRecord] = []
        self.templates = templates

    # -- event plumbing

    def push(self, time_us: int, kind: int, payload=None) -> None:
        self.seq += 1
        if kind != _METRICS_TICK:
            self.live += 1
        heapq.heappush(self.heap, (time_us, self.seq, kind, payload))

    def run(self) -> MetricsLog:
        for i, tpl in enumerate(self.templates, start=1):
            self.push(tpl.arrival_us, _ARRIVAL, (i, tpl))
        if self.templates:
            self.push(self.window_us, _METRICS_TICK)
        while self.heap:
            time_us, _, kind, payload = heapq.heappop(self.heap)
            self.now = time_us
            if kind == _METRICS_TICK:
                if self.live > 0:
                    self.push(time_us + self.window_us, _METRICS_TICK)
                continue
            self.live -= 1
            if kind == _ARRIVAL:
                self._on_arrival(*payload)
            elif kind == _OPTIMIZE_DONE:
                self._on_optimize_done()
            else:
                self._on_batch_complete(*payload)
        total = sum(t.size for t in self.templates)
        done = sum(r.size for r in self.finished)
        if done != total:  # pragma: no cover - conservation guard
            raise SimError(f"request conservation broken: {done} of {total}")
        return MetricsLog(window_us=self.window_us,
                          records=tuple(sorted(self.finished, key=lambda r: r.id)))

    # -- bookkeeping

    def _record_drop(self, job: Job) -> None:
        self.finished.append(JobRecord(
            id=job.id, arrival_us=job.arrival_us, size=job.size,
            accuracy_slo=job.accuracy_slo, achieved_accuracy=None,
            completion_us=None, dropped=True, violated=True,
        ))

    def _record_completion(self, job: Job) -> None:
        self.finished.append(JobRecord(
            id=job.id, arrival_us=job.arrival_us, size=job.size,
            accuracy_slo=job.accuracy_slo,
            achieved_accuracy=job.assigned.effective_accuracy,
            completion_us=job.completion_us, dropped=False,
            violated=job.completion_us > job.deadline_us,
        ))

    # -- handlers

    def _on_arrival(self, job_id: int, tpl: JobTemplate) -> None:
        config = self.config
        if config.policy is Policy.NONE:
            candidates = self._none_candidates(tpl.size)
        else:
            candidates = candidates_with_rounding(config.matrix, tpl.size, tpl.accuracy_slo)
        job = Job(
            id=job_id, arrival_us=tpl.arrival_us, size=tpl.size,
            accuracy_slo=tpl.accuracy_slo, deadline_us=tpl.deadline_us,
            candidates=candidates,
        )
        if not candidates:
            job.state = JobState.DROPPED
            self._record_drop(job)
            return
        job.assigned_idx = len(candidates) - 1  # highest accuracy by default
        self.queue.admit(job)
        if config.policy is Policy.NONE:
            if self.queue.running is None:
                self._dispatch()
            return
        self.arrivals_since_opt += 1
        self._maybe_optimize()

    def _none_candidates(self, size: int) -> list[Candidate]:
        strategy = all_modalities_strategy(self.config.profile, size)
        return [Candidate(
            strategy=strategy,
            latency_us=strategy_latency_us(strategy, self.config.profile),
            effective_accuracy=effective_accuracy(strategy, self.config.profile),
            credit=strategy.job_size * self.config.profile.combo_accuracy_scaled(
                self.config.profile.all_modalities_mask),
        )]

    def _maybe_optimize(self) -> None:
        if self.optimize_done_at is not None or not len(self.queue):
            return
        if self.arrivals_since_opt >= self.config.watermark or self.queue.running is None:
            self.optimize_done_at = self.now + self.overhead_us
            self.push(self.optimize_done_at, _OPTIMIZE_DONE)

    def _on_optimize_done(self) -> None:
        self.optimize_done_at = None
        drops = apply_policy(self.config.policy, self.queue, self.now,
                             self.feedback, self.rng)
        for job in drops:
            self._record_drop(job)
        self.arrivals_since_opt = 0
        if self.queue.running is None:
            self._dispatch()
        self._maybe_optimize()

    def _dispatch(self) -> None:
        job, drops = next_dispatch(self.queue, self.now, self.feedback)
        for dropped in drops:
            self._record_drop(dropped)
        if job is None:
            return
        t = self.now
        parts = job.assigned.strategy.parts
        for i, (mask, batch) in enumerate(parts):
            predicted = self.config.profile.part_latency_us(mask, batch)
            actual = max(1, round(predicted * self.config.discrepancy))
            t += actual
            self.push(t, _BATCH_COMPLETE, (job, predicted, actual, i == len(parts) - 1))

    def _on_batch_complete(self, job: Job, predicted_us: int, actual_us: int,
                           final: bool) -> None:
        update_latency_feedback(self.feedback, predicted_us, actual_us)
        if not final:
            return
        job.state = JobState.COMPLETED
        job.completion_us = self.now
        self.queue.running = None
        self._record_completion(job)
        if not len(self.queue):
            return
        if self.config.policy is Policy.NONE:
            self._dispatch()
            return
        if self.arrivals_since_opt > 0:
            self._maybe_optimize()
        if self.optimize_done_at == self.now:
            return  # this instant's pass will dispatch when it lands
        self._dispatch()


def run(config: SimConfig, workload) -> MetricsLog:
    """Simulate one run.

    ``workload`` is a WorkloadSpec or an explicit JobTemplate sequence.
    Deterministic for a fixed (config, workload).
    """
    if isinstance(workload, WorkloadSpec):
        templates = generate_jobs(workload, config.profile)
    else:
        templates = sorted(workload, key=lambda t: t.arrival_us)
    return _Simulation(config, templates).run()


def all_modalities_capacity_qps(profile: ModelProfile) -> float:
    """Requests per second the worker sustains when every request runs the
    full modality set at the largest batch."""
    full = profile.all_modalities_mask
    lat = profile.part_latency_us(full, profile.max_batch)
    return profile.max_batch * 1_000_000 / lat
