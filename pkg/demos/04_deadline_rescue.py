"""
Deadline rescue: trading accuracy ahead of the queue
====================================================

Three jobs arrive in 20 ms.  Greedily keeping everyone at maximum accuracy
runs job 2 until 140 ms and leaves job 3 no way to meet its 150 ms deadline.
The optimized policy detects the upcoming violation, computes the time budget
to the violator's deadline, and re-picks strategies for the jobs ahead of it:
job 2 gives up a little accuracy, job 3 finishes exactly on time, and among
equal-total plans the tie-break prefers the more even accuracy split.
"""

from modserve import (JobTemplate, Policy, SimConfig, build_matrix,
                      demo_profile, recommended_alphas, run)

MS = 1000
profile = demo_profile()
matrix = build_matrix(profile, [1, 2], recommended_alphas(profile))

jobs = [
    JobTemplate(arrival_us=0, size=1, accuracy_slo=0.67, deadline_us=20 * MS),
    JobTemplate(arrival_us=10 * MS, size=2, accuracy_slo=0.71, deadline_us=140 * MS),
    JobTemplate(arrival_us=20 * MS, size=2, accuracy_slo=0.65, deadline_us=150 * MS),
]

for policy in (Policy.OPTIMIZED, Policy.NONE):
    config = SimConfig(profile=profile, matrix=matrix, policy=policy,
                       optimizer_overhead_ms=0.0, discrepancy=1.0, seed=1)
    log = run(config, jobs)
    print(f"policy {policy.value}:")
    for r in log.records:
        if r.dropped:
            print(f"  job {r.id} (floor {r.accuracy_slo}): DROPPED")
        else:
            state = "late" if r.violated else "on time"
            print(f"  job {r.id} (floor {r.accuracy_slo}): finished at "
                  f"{r.completion_us / MS:>5.0f} ms with accuracy "
                  f"{r.achieved_accuracy} ({state})")
    print(f"  violated requests: {log.violated_requests}/{log.total_requests}\n")
