"""Modality-aware inference serving at desk scale.

Offline: exact solver turning per-model latency/accuracy profiles into a
strategy matrix (cheapest modality selection per job size and accuracy
floor).  Online: a deadline-driven scheduler with four reassignment policies,
exercised by a deterministic discrete-event simulator instead of real GPUs.
"""

from .metrics import (JobRecord, MetricsLog, Summary, WindowStats,
                      accuracy_histogram, export, read_log, summarize,
                      window_stats)
from .profile import (ModalityCombo, ModelProfile, ProfileError, SynthSpec,
                      count_strategies, demo_profile, enumerate_combos,
                      load_profile, save_profile, scale_latency, synth_profile)
from .scheduler import (FeedbackState, Job, JobQueue, JobState, Policy,
                        ScheduleEstimate, apply_policy,
                        build_schedule_estimate, candidates_with_rounding,
                        compute_budget, detect_violation, next_dispatch,
                        reassign_aggressive, reassign_optimized,
                        reassign_random, try_upgrade, update_latency_feedback)
from .sim import (JobTemplate, SimConfig, SimError, WorkloadError,
                  WorkloadSpec, all_modalities_capacity_qps, generate_jobs,
                  load_scenario, load_trace, map_trace_to_qps,
                  matrix_for_jobs, run)
from .strategy import (Candidate, MatrixCell, MatrixError, SolverError,
                       Strategy, StrategyMatrix, all_modalities_strategy,
                       brute_force_offline, build_matrix, candidates_for_job,
                       default_alpha_grid, distinct_effective_accuracies,
                       effective_accuracy, load_matrix, recommended_alphas,
                       save_matrix, solve_offline, strategy_latency_ms,
                       strategy_latency_us, validate_matrix)

__version__ = "0.1.0"
