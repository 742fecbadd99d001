"""Online stage: deadline-ordered queue and strategy reassignment policies.

Jobs queue in earliest-deadline-first order, each holding the Pareto frontier
of matrix strategies that meet its accuracy floor.  When the schedule estimate
says a queued job will miss its deadline, a policy reassigns strategies of the
jobs ahead of it (trading accuracy for speed); when the queue is healthy, the
optimized policy walks assignments back up the frontier.

All times are integer microseconds.  Estimated latencies are the assigned
strategy's profiled latency times a feedback-maintained correction factor, so
the scheduler tracks reality even when profiles are systematically off.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .profile import ACC_SCALE
from .strategy import Candidate, StrategyMatrix, candidates_for_job


class Policy(enum.Enum):
    OPTIMIZED = "optimized"
    RANDOM = "random"
    AGGRESSIVE = "aggressive"
    NONE = "none"


class JobState(enum.Enum):
    QUEUED = "queued"
    RUNNING = "running"
    COMPLETED = "completed"
    DROPPED = "dropped"


@dataclass
class Job:
    """One inference job: a batch of requests sharing an accuracy floor and a
    deadline.

    ``candidates`` is the job's frontier, ascending by latency and accuracy;
    ``assigned_idx`` indexes into it and is the only field policies touch.
    """

    id: int
    arrival_us: int
    size: int
    accuracy_slo: float
    deadline_us: int
    candidates: list[Candidate]
    assigned_idx: int = 0
    state: JobState = JobState.QUEUED
    completion_us: int | None = None
    est_finish_us: int | None = None  # set at dispatch

    def __post_init__(self):
        if self.deadline_us <= self.arrival_us:
            raise ValueError(f"job {self.id}: deadline must be after arrival")
        if self.size < 1:
            raise ValueError(f"job {self.id}: size must be >= 1")

    @property
    def assigned(self) -> Candidate:
        return self.candidates[self.assigned_idx]

    @property
    def fastest(self) -> Candidate:
        return self.candidates[0]


@dataclass
class FeedbackState:
    """Exponentially weighted ratio of observed to predicted latency."""

    factor: float = 1.0
    weight: float = 0.2

    def estimate_us(self, latency_us: int) -> int:
        return round(latency_us * self.factor)


def update_latency_feedback(feedback: FeedbackState, predicted_us: int,
                            observed_us: int) -> None:
    if observed_us <= 0 or predicted_us <= 0:
        raise ValueError("latencies must be positive")
    feedback.factor = ((1.0 - feedback.weight) * feedback.factor
                       + feedback.weight * (observed_us / predicted_us))


class JobQueue:
    """Queued jobs in EDF order (FIFO among equal deadlines) plus the one
    running job, if any."""

    def __init__(self):
        self._jobs: list[tuple[int, int, Job]] = []
        self._seq = 0
        self.running: Job | None = None

    def __len__(self) -> int:
        return len(self._jobs)

    def __iter__(self):
        return (job for _, _, job in self._jobs)

    def jobs(self) -> list[Job]:
        return [job for _, _, job in self._jobs]

    def admit(self, job: Job) -> None:
        if job.state is not JobState.QUEUED:
            raise ValueError(f"job {job.id} is {job.state.value}, not queued")
        self._seq += 1
        key = (job.deadline_us, self._seq)
        lo, hi = 0, len(self._jobs)
        while lo < hi:
            mid = (lo + hi) // 2
            if self._jobs[mid][:2] <= key:
                lo = mid + 1
            else:
                hi = mid
        self._jobs.insert(lo, (job.deadline_us, self._seq, job))

    def remove(self, job: Job) -> None:
        for i, (_, _, j) in enumerate(self._jobs):
            if j is job:
                del self._jobs[i]
                return
        raise ValueError(f"job {job.id} not queued")

    def pop_head(self) -> Job:
        _, _, job = self._jobs.pop(0)
        return job


def candidates_with_rounding(matrix: StrategyMatrix, job_size: int,
                             accuracy_slo: float) -> list[Candidate]:
    """Candidate lookup that rounds unprofiled job sizes up to the next
    profiled size.

    The rounded strategy covers more requests than the job has, so its stored
    latency over-estimates (safe) and its accuracy credit is re-averaged over
    the true request count.  Returns [] when the floor is unattainable or the
    job exceeds every profiled size.
    """
    if job_size in matrix.sizes:
        return candidates_for_job(matrix, job_size, accuracy_slo)
    larger = [s for s in matrix.sizes if s > job_size]
    if not larger:
        return []
    rounded = min(larger)
    # credit >= slo * size * SCALE is the real constraint; translate it to the
    # rounded size's per-request scale for the lookup.
    lookup_slo = accuracy_slo * job_size / rounded
    cands = candidates_for_job(matrix, rounded, lookup_slo)
    return [
        Candidate(
            strategy=c.strategy,
            latency_us=c.latency_us,
            effective_accuracy=min(1.0, c.credit / (ACC_SCALE * job_size)),
            credit=c.credit,
        )
        for c in cands
        if c.credit >= math.ceil(accuracy_slo * job_size * ACC_SCALE - 1e-6)
    ]


@dataclass
class ScheduleEstimate:
    job: Job
    start_us: int
    completion_us: int
    violating: bool


def dispatch_time_us(queue: JobQueue, now_us: int) -> int:
    """When the next queued job could start: now, or the running job's
    estimated finish."""
    running = queue.running
    if running is not None and running.est_finish_us is not None:
        return max(now_us, running.est_finish_us)
    return now_us


def build_schedule_estimate(queue: JobQueue, now_us: int,
                            feedback: FeedbackState) -> list[ScheduleEstimate]:
    """Prefix-sum completion estimates for every queued job, in EDF order.

    Finishing exactly at the deadline is on time.
    """
    t = dispatch_time_us(queue, now_us)
    out = []
    for job in queue:
        start = t
        t = start + feedback.estimate_us(job.assigned.latency_us)
        out.append(ScheduleEstimate(job, start, t, t > job.deadline_us))
    return out


def detect_violation(queue: JobQueue, now_us: int,
                     feedback: FeedbackState) -> Job | None:
    """Earliest-deadline queued job whose estimated completion misses its
    deadline, or None."""
    for est in build_schedule_estimate(queue, now_us, feedback):
        if est.violating:
            return est.job
    return None


def compute_budget(queue: JobQueue, violator: Job | None,
                   now_us: int) -> tuple[int, list[Job]]:
    """Time budget and reassignment scope.

    With a violator: budget runs from the next dispatch to the violator's
    deadline and the scope is every queued job up to and including it.
    Otherwise the budget runs to the last queued deadline and the scope is
    the whole queue.  A non-positive budget means the violator cannot be
    saved by any reassignment.
    """
    jobs = queue.jobs()
    if not jobs:
        return 0, []
    dispatch = dispatch_time_us(queue, now_us)
    if violator is None:
        return jobs[-1].deadline_us - dispatch, jobs
    scope = []
    for job in jobs:
        scope.append(job)
        if job is violator:
            return violator.deadline_us - dispatch, scope
    raise ValueError(f"violator {violator.id} not in queue")


def reassign_optimized(scope: list[Job], budget_us: int, dispatch_us: int,
                       feedback: FeedbackState) -> list[int] | None:
    """Exact multiple-choice knapsack over the scope's candidate frontiers.

    Maximizes request-weighted accuracy subject to the total budget and to
    every prefix finishing by its job's deadline.  Ties prefer the higher
    minimum per-job accuracy, then the lower total latency; any remaining
    tie resolves deterministically (jobs later in the scope take the faster
    candidate).  Returns the chosen candidate index per job, or None when no
    selection fits.

    The knapsack runs on a 1 ms grid with latencies rounded up, so a returned
    selection never understates its true latency.
    """
    if not scope:
        return []
    budget_ms = budget_us // 1000

    def lat_ms_of(cand: Candidate) -> int:
        return -(-feedback.estimate_us(cand.latency_us) // 1000)

    # No reachable state can exceed the sum of the slowest candidates, which
    # is usually far below the nominal budget; cap the grid there.
    caps_ms = []
    prefix_max = 0
    for job in scope:
        prefix_max += max(lat_ms_of(c) for c in job.candidates)
        caps_ms.append(min(budget_ms, prefix_max,
                           (job.deadline_us - dispatch_us) // 1000))
    if min(caps_ms) < 0:
        return None
    width = caps_ms[-1] + 1

    NEG = np.int64(-1)
    acc = np.full(width, NEG)
    acc[0] = 0
    min_acc = np.full(width, np.inf)
    stages = []
    for job, cap in zip(scope, caps_ms):
        new_acc = np.full(width, NEG)
        new_min = np.full(width, -np.inf)
        hi = min(cap, width - 1)
        for cand in job.candidates:
            lat_ms = -(-feedback.estimate_us(cand.latency_us) // 1000)
            if lat_ms > hi:
                continue
            src_acc = acc[: hi - lat_ms + 1]
            src_min = min_acc[: hi - lat_ms + 1]
            cand_acc = src_acc + cand.credit
            cand_min = np.minimum(src_min, cand.effective_accuracy)
            dst_acc = new_acc[lat_ms: hi + 1]
            dst_min = new_min[lat_ms: hi + 1]
            valid = src_acc >= 0
            better = valid & ((cand_acc > dst_acc)
                              | ((cand_acc == dst_acc) & (cand_min > dst_min)))
            np.copyto(dst_acc, cand_acc, where=better)
            np.copyto(dst_min, cand_min, where=better)
        stages.append((acc, min_acc))
        acc, min_acc = new_acc, new_min

    feasible = np.flatnonzero(acc >= 0)
    if feasible.size == 0:
        return None
    best_acc = acc[feasible].max()
    pool = feasible[acc[feasible] == best_acc]
    best_min = min_acc[pool].max()
    t = int(pool[min_acc[pool] == best_min].min())

    # Walk the stages backwards, giving each job the fastest candidate that
    # still reproduces the optimal value.
    choice = [0] * len(scope)
    target_acc = int(acc[t])
    target_min = float(min_acc[t])
    for j in range(len(scope) - 1, -1, -1):
        prev_acc, prev_min = stages[j]
        job, cap = scope[j], caps_ms[j]
        for idx, cand in enumerate(job.candidates):
            lat_ms = -(-feedback.estimate_us(cand.latency_us) // 1000)
            src = t - lat_ms
            if src < 0 or t > cap or prev_acc[src] < 0:
                continue
            if (int(prev_acc[src]) + cand.credit == target_acc
                    and min(float(prev_min[src]), cand.effective_accuracy) == target_min):
                choice[j] = idx
                t = src
                target_acc = int(prev_acc[src])
                target_min = float(prev_min[src])
                break
        else:  # pragma: no cover - the DP guarantees a consistent path
            raise RuntimeError("knapsack reconstruction failed")
    return choice


def reassign_random(queue: JobQueue, violator: Job, now_us: int,
                    feedback: FeedbackState, rng: np.random.Generator) -> bool:
    """Greedy randomized rescue: repeatedly pick a random job ahead of the
    violator and drop it to its fastest floor-meeting candidate until the
    violator's estimated completion fits its deadline.

    If the predecessors alone cannot save it, the violator itself falls back
    to its fastest candidate.  Returns True when the violator was saved.
    """

    def violator_completion() -> int:
        for est in build_schedule_estimate(queue, now_us, feedback):
            if est.job is violator:
                return est.completion_us
        raise ValueError("violator not queued")

    ahead = []
    for job in queue:
        if job is violator:
            break
        ahead.append(job)
    pool = [job for job in ahead if job.assigned_idx != 0]
    while violator_completion() > violator.deadline_us and pool:
        pick = int(rng.integers(len(pool)))
        pool[pick].assigned_idx = 0
        pool.pop(pick)
    if violator_completion() > violator.deadline_us:
        violator.assigned_idx = 0
    return violator_completion() <= violator.deadline_us


def reassign_aggressive(queue: JobQueue) -> None:
    """Every queued job to its fastest floor-meeting candidate, always."""
    for job in queue:
        job.assigned_idx = 0


def try_upgrade(queue: JobQueue, now_us: int, feedback: FeedbackState) -> None:
    """With no violation pending, promote jobs (EDF order) to higher-accuracy
    candidates as long as the whole queue still meets its deadlines."""
    changed = True
    while changed:
        changed = False
        for job in queue:
            while job.assigned_idx + 1 < len(job.candidates):
                job.assigned_idx += 1
                if detect_violation(queue, now_us, feedback) is None:
                    changed = True
                else:
                    job.assigned_idx -= 1
                    break


def apply_policy(policy: Policy, queue: JobQueue, now_us: int,
                 feedback: FeedbackState,
                 rng: np.random.Generator | None = None) -> list[Job]:
    """Run one reassignment pass; returns jobs the policy dropped.

    Dropped jobs are removed from the queue with state DROPPED; recording
    them is the caller's job.
    """
    drops: list[Job] = []

    def drop(job: Job) -> None:
        queue.remove(job)
        job.state = JobState.DROPPED
        drops.append(job)

    if policy is Policy.NONE:
        return drops

    if policy is Policy.AGGRESSIVE:
        reassign_aggressive(queue)
        return drops

    if policy is Policy.RANDOM:
        if rng is None:
            raise ValueError("random policy needs a seeded generator")
        while (violator := detect_violation(queue, now_us, feedback)) is not None:
            if not reassign_random(queue, violator, now_us, feedback, rng):
                drop(violator)
        return drops

    while (violator := detect_violation(queue, now_us, feedback)) is not None:
        budget_us, scope = compute_budget(queue, violator, now_us)
        selection = None
        if budget_us > 0:
            selection = reassign_optimized(
                scope, budget_us, dispatch_time_us(queue, now_us), feedback
            )
        if selection is None:
            drop(violator)
            continue
        for job, idx in zip(scope, selection):
            job.assigned_idx = idx
    try_upgrade(queue, now_us, feedback)
    return drops


def next_dispatch(queue: JobQueue, now_us: int,
                  feedback: FeedbackState) -> tuple[Job | None, list[Job]]:
    """Pop the next runnable job.

    Head jobs that cannot meet their deadline even at their fastest
    candidate (after latency correction) are dropped rather than run late.
    Returns (job, dropped); the job is marked RUNNING.
    """
    if queue.running is not None:
        raise ValueError("a job is already running")
    drops: list[Job] = []
    while len(queue):
        job = queue.pop_head()
        if now_us + feedback.estimate_us(job.fastest.latency_us) > job.deadline_us:
            job.state = JobState.DROPPED
            drops.append(job)
            continue
        job.state = JobState.RUNNING
        job.est_finish_us = now_us + feedback.estimate_us(job.assigned.latency_us)
        queue.running = job
        return job, drops
    return None, drops
