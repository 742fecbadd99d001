"""Acceptance criteria, one test per criterion.

Each test prints one `ACCEPTANCE n: PASS/FAIL` line (run with ``pytest -s``
to see them live).  Criterion 9 is a soft budget and prints WARN instead of
failing.
"""

import time

import numpy as np
import pytest

from modserve.cli import main as cli_main
from modserve.metrics import MetricsLog
from modserve.profile import (ACC_SCALE, SynthSpec, count_strategies,
                              demo_profile, save_profile, synth_profile)
from modserve.scheduler import FeedbackState, Job, Policy, reassign_optimized
from modserve.sim import (JobTemplate, SimConfig, WorkloadSpec,
                          all_modalities_capacity_qps, generate_jobs,
                          matrix_for_jobs, run)
from modserve.strategy import (Candidate, Strategy, brute_force_offline,
                               build_matrix, candidates_for_job,
                               recommended_alphas, solve_offline,
                               strategy_latency_us)

MS = 1000

GOLDEN_JOBS = [
    JobTemplate(0, 1, 0.67, 20 * MS),
    JobTemplate(10 * MS, 2, 0.71, 140 * MS),
    JobTemplate(20 * MS, 2, 0.65, 150 * MS),
]

DOMINANCE_SEEDS = [1, 2, 3, 4, 5]
AWARE = (Policy.OPTIMIZED, Policy.RANDOM, Policy.AGGRESSIVE)

_slo_audit_logs: list[MetricsLog] = []


def _audit(log: MetricsLog) -> MetricsLog:
    _slo_audit_logs.append(log)
    return log


def _report(n, ok: bool, detail: str) -> None:
    print(f"\nACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} - {detail}")


@pytest.fixture(scope="module")
def golden_logs():
    p = demo_profile()
    m = build_matrix(p, [1, 2], recommended_alphas(p))
    logs = {}
    for policy in (Policy.OPTIMIZED, Policy.NONE):
        cfg = SimConfig(profile=p, matrix=m, policy=policy,
                        optimizer_overhead_ms=0.0, discrepancy=1.0, seed=1)
        logs[policy] = _audit(run(cfg, GOLDEN_JOBS))
    return logs


@pytest.fixture(scope="module")
def dominance_runs():
    p = demo_profile()
    qps = round(2 * all_modalities_capacity_qps(p))
    started = time.perf_counter()
    logs = {policy: [] for policy in Policy}
    duration = 60
    for seed in DOMINANCE_SEEDS:
        spec = WorkloadSpec(kind="constant", qps=qps, duration_s=duration, seed=seed)
        jobs = generate_jobs(spec, p)
        matrix = matrix_for_jobs(p, jobs)
        for policy in Policy:
            cfg = SimConfig(profile=p, matrix=matrix, policy=policy, seed=seed)
            logs[policy].append(_audit(run(cfg, jobs)))
    return logs, duration, time.perf_counter() - started


def test_criterion_1_strategy_counts():
    """Strategy-space combinatorics match the worked micro examples exactly."""
    ok = count_strategies(2, 3) == 6 and count_strategies(20, 3) == 231
    _report(1, ok, f"count_strategies(2,3)={count_strategies(2, 3)}, "
                   f"count_strategies(20,3)={count_strategies(20, 3)}")
    assert ok


def test_criterion_2_solver_matches_brute_force_oracle():
    """100 seeded profiles, job sizes <= 12, alphas on a 0.05 grid: the exact
    solver and the enumeration oracle agree on total latency, and every
    solution meets both covering constraints.  Budget: < 60 s."""
    started = time.perf_counter()
    alphas = [round(0.05 * k, 2) for k in range(21)]
    checked = 0
    for seed in range(100):
        spec = SynthSpec(n_modalities=2 + seed % 2, max_batch=1 + (seed * 7) % 4)
        profile = synth_profile(spec, seed)
        for size in range(12, 0, -1):
            for alpha in alphas:
                fast = solve_offline(profile, size, alpha)
                slow = brute_force_offline(profile, size, alpha)
                assert (fast is None) == (slow is None), (seed, size, alpha)
                if fast is None:
                    continue
                checked += 1
                assert (strategy_latency_us(fast, profile)
                        == strategy_latency_us(slow, profile)), (seed, size, alpha)
                assert sum(b for _, b in fast.parts) == size
                credit = sum(profile.combo_accuracy_scaled(m) * b for m, b in fast.parts)
                assert credit >= round(alpha * size * ACC_SCALE)
    elapsed = time.perf_counter() - started
    ok = elapsed < 60.0
    _report(2, ok, f"{checked} feasible cells agreed across 100 profiles "
                   f"in {elapsed:.1f}s (budget 60s)")
    assert ok


def test_criterion_3_deadline_rescue_scenario(golden_logs):
    """Scripted three-job scenario: the optimized policy reproduces the
    rescue plan exactly; the modality-agnostic baseline misses job 3."""
    by_id = {r.id: r for r in golden_logs[Policy.OPTIMIZED].records}
    ok = (
        by_id[2].completion_us == 100 * MS and by_id[2].achieved_accuracy == 0.735
        and by_id[3].completion_us == 150 * MS and by_id[3].achieved_accuracy == 0.685
        and golden_logs[Policy.OPTIMIZED].violated_requests == 0
        and {r.id: r.violated for r in golden_logs[Policy.NONE].records}[3]
    )
    _report(3, ok, "optimized: job2@100ms/0.735, job3@150ms/0.685, 0 violations; "
                   "none: job3 violated")
    assert by_id[2].completion_us == 100 * MS
    assert by_id[2].achieved_accuracy == 0.735
    assert by_id[3].completion_us == 150 * MS
    assert by_id[3].achieved_accuracy == 0.685
    assert golden_logs[Policy.OPTIMIZED].violated_requests == 0
    none_by_id = {r.id: r for r in golden_logs[Policy.NONE].records}
    assert none_by_id[3].violated


def test_criterion_4_matrix_monotonicity():
    """Latency is non-decreasing in the accuracy floor (fixed size) and in
    the size (fixed floor), checked over every cell pair of every matrix."""
    profiles = [demo_profile()] + [
        synth_profile(SynthSpec(n_modalities=2 + s % 2, max_batch=1 + s % 4), s)
        for s in range(6)
    ]
    pairs = 0
    for profile in profiles:
        matrix = build_matrix(profile, range(1, 9), recommended_alphas(profile))
        for size in matrix.sizes:
            cells = [(a, matrix.cell(size, a)) for a in matrix.alphas]
            for i, (a1, c1) in enumerate(cells):
                for a2, c2 in cells[i + 1:]:
                    if c1 is not None and c2 is not None:
                        assert c1.latency_us <= c2.latency_us, (profile.name, size, a1, a2)
                        pairs += 1
        for alpha in matrix.alphas:
            cells = [(s, matrix.cell(s, alpha)) for s in matrix.sizes]
            for i, (s1, c1) in enumerate(cells):
                for s2, c2 in cells[i + 1:]:
                    if c1 is not None and c2 is not None:
                        assert c1.latency_us <= c2.latency_us, (profile.name, alpha, s1, s2)
                        pairs += 1
    _report(4, True, f"{pairs} ordered cell pairs monotone over {len(profiles)} matrices")


def test_criterion_5_slo_compliance(golden_logs, dominance_runs):
    """Every completed job in every simulation run of this suite achieved at
    least its accuracy floor (zero tolerance)."""
    jobs = 0
    for log in _slo_audit_logs:
        for r in log.records:
            if r.achieved_accuracy is not None:
                assert r.achieved_accuracy >= r.accuracy_slo, r
                jobs += 1
    _report(5, True, f"{jobs} completed jobs all met their accuracy floor")


def test_criterion_6_policy_dominance(dominance_runs):
    """Canonical 2x overload, 5 seeds: every modality-aware policy beats the
    baseline's violation ratio strictly, and aware throughput is >= 1.5x the
    baseline's."""
    logs, duration, elapsed = dominance_runs
    mean_viol = {p: float(np.mean([log.violation_ratio() for log in logs[p]]))
                 for p in Policy}
    mean_thr = {p: float(np.mean([log.completed_requests / duration for log in logs[p]]))
                for p in Policy}
    viol_ok = all(mean_viol[p] < mean_viol[Policy.NONE] for p in AWARE)
    ratios = {p.value: mean_thr[p] / mean_thr[Policy.NONE] for p in AWARE}
    thr_ok = all(r >= 1.5 for r in ratios.values())
    time_ok = elapsed < 30.0
    detail = (f"violation none={mean_viol[Policy.NONE]:.3f} vs "
              + ", ".join(f"{p.value}={mean_viol[p]:.3f}" for p in AWARE)
              + f"; throughput ratios {ratios} (need >= 1.5)"
              + f"; runtime {elapsed:.1f}s (budget 30s)")
    _report(6, viol_ok and thr_ok and time_ok, detail)
    assert time_ok
    assert viol_ok
    assert thr_ok, (
        "throughput clause unattainable at these workload parameters: with "
        "accuracy floors uniform over the profile's combo range, the cheapest "
        "floor-meeting cost averages the audio-vs-both hull at its midpoint, "
        "which caps the ratio at exactly 1.5 before integrality; see "
        "notes/decisions.md"
    )


def test_criterion_7_fairness_tie_break(demo_matrix):
    """On the rescue instance the optimizer picks the plan with weighted
    accuracy 2.84 and the HIGHER minimum per-job accuracy (0.685), not the
    equal-total alternative whose minimum is 0.67."""
    j2 = Job(2, 10 * MS, 2, 0.71, 140 * MS, candidates_for_job(demo_matrix, 2, 0.71))
    j3 = Job(3, 20 * MS, 2, 0.65, 150 * MS, candidates_for_job(demo_matrix, 2, 0.65))
    sel = reassign_optimized([j2, j3], 130 * MS, 20 * MS, FeedbackState())
    j2.assigned_idx, j3.assigned_idx = sel
    weighted = 2 * j2.assigned.effective_accuracy + 2 * j3.assigned.effective_accuracy
    min_acc = min(j2.assigned.effective_accuracy, j3.assigned.effective_accuracy)
    ok = (j2.assigned.credit + j3.assigned.credit == 28_400 and min_acc == 0.685)
    _report(7, ok, f"weighted accuracy {weighted:.2f}, min job accuracy {min_acc}")
    assert j2.assigned.credit + j3.assigned.credit == 28_400
    assert min_acc == 0.685
    assert (j2.assigned.latency_ms, j3.assigned.latency_ms) == (80.0, 50.0)


def test_criterion_8_estimate_error_ablation():
    """Optimized-policy throughput collapses under 2.5x latency
    underestimation but stays within 5% of nominal for actual latencies at
    or below the estimates."""
    p = demo_profile()
    qps = round(0.7 * all_modalities_capacity_qps(p))
    spec = WorkloadSpec(kind="constant", qps=qps, duration_s=60, seed=3)
    jobs = generate_jobs(spec, p)
    matrix = matrix_for_jobs(p, jobs)

    def throughput(d: float) -> float:
        cfg = SimConfig(profile=p, matrix=matrix, policy=Policy.OPTIMIZED,
                        discrepancy=d, seed=3)
        return _audit(run(cfg, jobs)).completed_requests / spec.duration_s

    base = throughput(1.0)
    slow = throughput(2.5)
    fast = {d: throughput(d) for d in (0.2, 0.5, 0.75)}
    within = {d: abs(t - base) / base for d, t in fast.items()}
    ok = slow < base and all(v <= 0.05 for v in within.values())
    _report(8, ok, f"throughput d=1.0: {base:.2f}, d=2.5: {slow:.2f} (must be lower); "
                   f"deviation at d<=1: {max(within.values()):.1%} (budget 5%)")
    assert slow < base
    assert all(v <= 0.05 for v in within.values())


def test_criterion_9_online_optimizer_budget():
    """Soft budget: the exact reassignment on 20 jobs x 10 candidates with a
    100 s budget grid should stay under 80 ms.  Warns, never fails."""
    jobs = []
    rng = np.random.default_rng(0)
    for i in range(20):
        cands = []
        for k in range(10):
            lat = int(rng.integers(20, 400)) * MS + k * 37 * MS
            eff = round(0.5 + 0.045 * k, 4)
            cands.append(Candidate(Strategy.make([(1, 1)] * 3), lat, eff,
                                   round(eff * 3 * ACC_SCALE)))
        cands.sort(key=lambda c: c.latency_us)
        jobs.append(Job(i + 1, 0, 3, 0.5, 10**9, cands, assigned_idx=9))
    fb = FeedbackState()
    reassign_optimized(jobs, 10**5 * MS, 0, fb)  # warm-up
    best = float("inf")
    for _ in range(3):
        t0 = time.perf_counter()
        reassign_optimized(jobs, 10**5 * MS, 0, fb)
        best = min(best, time.perf_counter() - t0)
    ok = best < 0.080
    status = "PASS" if ok else "WARN (soft criterion, not failing)"
    print(f"\nACCEPTANCE 9: {status} - optimizer took {best * 1000:.1f} ms "
          f"on 20 jobs x 10 candidates (budget 80 ms)")


def test_criterion_10_deterministic_experiments(tmp_path):
    """Identical CLI invocations produce byte-identical CSV exports."""
    profile_path = tmp_path / "demo.yaml"
    save_profile(demo_profile(), profile_path)
    blobs = []
    for name in ("first", "second"):
        out = tmp_path / name
        code = cli_main([
            "simulate", "--profile", str(profile_path), "--qps", "30",
            "--duration", "8", "--policy", "random", "--seed", "11",
            "--out", str(out),
        ])
        assert code == 0
        blobs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    ok = blobs[0] == blobs[1]
    _report(10, ok, f"{len(blobs[0])} export files byte-identical across re-runs")
    assert ok
