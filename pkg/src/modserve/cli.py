"""Command-line front end: profile tooling, matrix construction, simulation.

Exit codes: 0 success, 1 validation error (bad inputs/files), 2 runtime error.
Every experiment takes an explicit --seed; identical invocations produce
byte-identical output files.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import yaml

from .metrics import MetricsLog, export, window_stats
from .profile import (ModelProfile, ProfileError, SynthSpec, load_profile,
                      save_profile, synth_profile)
from .scheduler import Policy
from .sim import (SimConfig, SimError, WorkloadError, WorkloadSpec,
                  generate_jobs, load_scenario, matrix_for_jobs, run)
from .strategy import (MatrixError, build_matrix, load_matrix,
                       recommended_alphas, save_matrix)


class CliError(Exception):
    def __init__(self, message: str, code: int = 1):
        super().__init__(message)
        self.code = code


def _parse_sizes(tokens: list[str]) -> list[int]:
    sizes: list[int] = []
    for tok in tokens:
        if ".." in tok:
            lo, hi = tok.split("..", 1)
            sizes.extend(range(int(lo), int(hi) + 1))
        else:
            sizes.append(int(tok))
    return sorted(set(sizes))


def _load_config_file(path: str) -> dict:
    text = Path(path).read_text()
    if path.endswith(".json"):
        return json.loads(text)
    return yaml.safe_load(text) or {}


def _merge_config(args: argparse.Namespace, keys: list[str]) -> None:
    """Fill unset flags from --config, leaving explicit flags in charge."""
    if not getattr(args, "config", None):
        return
    doc = _load_config_file(args.config)
    unknown = set(doc) - set(keys)
    if unknown:
        raise CliError(f"unknown config keys: {sorted(unknown)}")
    for key in keys:
        if key in doc and getattr(args, key, None) is None:
            setattr(args, key, doc[key])


def _require(args: argparse.Namespace, *names: str) -> None:
    for name in names:
        if getattr(args, name, None) is None:
            raise CliError(f"missing required option --{name.replace('_', '-')}")


# --- profile ------------------------------------------------------------------


def _cmd_profile_validate(args) -> int:
    try:
        profile = load_profile(args.path)
    except (ProfileError, OSError) as exc:
        print(f"invalid profile: {exc}", file=sys.stderr)
        return 1
    combos = profile.all_modalities_mask
    print(f"ok: model '{profile.name}', {profile.n_modalities} modalities, "
          f"{combos} combos, max batch {profile.max_batch}")
    return 0


def _cmd_profile_synth(args) -> int:
    _require(args, "seed", "out")
    spec = SynthSpec(
        n_modalities=args.modalities,
        max_batch=args.max_batch,
        latency_ms=tuple(args.latency_ms),
        accuracy=tuple(args.accuracy),
        name=args.name,
    )
    profile = synth_profile(spec, args.seed)
    save_profile(profile, args.out)
    print(f"wrote {args.out} ({profile.n_modalities} modalities, "
          f"max batch {profile.max_batch})")
    return 0


# --- matrix -------------------------------------------------------------------


def _cmd_matrix_build(args) -> int:
    _require(args, "profile", "out")
    profile = load_profile(args.profile)
    sizes = _parse_sizes(args.sizes)
    if args.alphas == ["auto"]:
        alphas = recommended_alphas(profile)
    else:
        alphas = sorted(float(a) for a in args.alphas)
    started = time.perf_counter()
    matrix = build_matrix(profile, sizes, alphas)
    elapsed = time.perf_counter() - started
    save_matrix(matrix, args.out)
    total = len(matrix.cells)
    feasible = matrix.feasible_cells()
    print(f"wrote {args.out}: {total} cells ({feasible} feasible) in {elapsed:.2f}s")
    if feasible < total:
        print(f"warning: {total - feasible} cells infeasible "
              f"(accuracy floor above the profile's best)", file=sys.stderr)
    return 0


def _cmd_matrix_inspect(args) -> int:
    matrix = load_matrix(args.path)
    key = (args.size, args.alpha)
    if key not in matrix.cells:
        raise CliError(f"cell {key} outside the matrix grid "
                       f"(sizes {list(matrix.sizes)}, alphas {list(matrix.alphas)})")
    cell = matrix.cells[key]
    if cell is None:
        print(f"size {args.size}, alpha {args.alpha}: infeasible")
        return 0
    labels = []
    for mask, batch in cell.strategy.parts:
        members = [m for k, m in enumerate(matrix.modalities) if mask >> k & 1]
        labels.append(f"{'+'.join(members)} x{batch}")
    print(f"size {args.size}, alpha {args.alpha}: latency {cell.latency_ms} ms, "
          f"effective accuracy {cell.effective_accuracy}")
    print("  parts: " + " | ".join(labels))
    return 0


# --- simulate / compare ---------------------------------------------------------


_SIM_KEYS = ["profile", "matrix", "scenario", "trace", "qps", "duration",
             "min_qps", "max_qps", "deadline_ms", "accuracy_range", "policy",
             "seed", "out", "overhead_ms", "discrepancy", "watermark",
             "window_ms"]


def _resolve_workload(args, profile: ModelProfile):
    """Jobs for the run: scripted scenario, constant rate, or trace-driven."""
    chosen = [x for x in (args.scenario, args.qps, args.trace) if x is not None]
    if len(chosen) != 1:
        raise CliError("pick exactly one of --scenario, --qps, or --trace")
    if args.scenario:
        return load_scenario(args.scenario)
    common = dict(
        duration_s=args.duration if args.duration is not None else 60,
        deadline_ms=args.deadline_ms if args.deadline_ms is not None else 1000.0,
        seed=args.seed,
    )
    if args.accuracy_range is not None:
        common["accuracy_range"] = tuple(args.accuracy_range)
    if args.qps is not None:
        spec = WorkloadSpec(kind="constant", qps=args.qps, **common)
    else:
        spec = WorkloadSpec(
            kind="trace", trace_path=args.trace,
            min_qps=args.min_qps if args.min_qps is not None else 5,
            max_qps=args.max_qps if args.max_qps is not None else 60,
            **common,
        )
    return generate_jobs(spec, profile)


def _sim_config(args, profile, matrix, policy: Policy) -> SimConfig:
    return SimConfig(
        profile=profile,
        matrix=matrix,
        policy=policy,
        optimizer_overhead_ms=args.overhead_ms if args.overhead_ms is not None else 70.0,
        discrepancy=args.discrepancy if args.discrepancy is not None else 1.0,
        watermark=args.watermark if args.watermark is not None else 2,
        window_ms=args.window_ms if args.window_ms is not None else 4000.0,
        seed=args.seed,
    )


def _summary_line(policy: Policy, log: MetricsLog) -> str:
    windows = window_stats(log)
    seconds = len(windows) * log.window_us / 1_000_000 if windows else 1.0
    return (f"{policy.value:<10s}  completed {log.completed_requests}/{log.total_requests} req"
            f"  throughput {log.completed_requests / seconds:7.2f} req/s"
            f"  violation_ratio {log.violation_ratio():.4f}"
            f"  mean_accuracy {log.mean_job_accuracy():.4f}")


def _prepare_run(args):
    _merge_config(args, _SIM_KEYS)
    _require(args, "profile", "seed", "out")
    profile = load_profile(args.profile)
    jobs = _resolve_workload(args, profile)
    if args.matrix:
        matrix = load_matrix(args.matrix, profile)
    else:
        matrix = matrix_for_jobs(profile, jobs)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    return profile, jobs, matrix, out_dir


def _cmd_simulate(args) -> int:
    profile, jobs, matrix, out_dir = _prepare_run(args)
    policy = Policy(args.policy)
    log = run(_sim_config(args, profile, matrix, policy), jobs)
    paths = export(log, out_dir / policy.value, "csv")
    paths += export(log, out_dir / policy.value, "json")
    print(_summary_line(policy, log))
    for p in paths:
        print(f"  wrote {p}")
    return 0


def _cmd_compare(args) -> int:
    profile, jobs, matrix, out_dir = _prepare_run(args)
    print(f"comparing policies on {len(jobs)} jobs "
          f"({sum(j.size for j in jobs)} requests), seed {args.seed}")
    for policy in Policy:
        log = run(_sim_config(args, profile, matrix, policy), jobs)
        export(log, out_dir / policy.value, "csv")
        export(log, out_dir / policy.value, "json")
        print(_summary_line(policy, log))
    return 0


# --- wiring ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modserve",
        description="Modality-aware inference serving: offline strategy tables "
                    "and a deterministic scheduling simulator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    prof = sub.add_parser("profile", help="validate or synthesize model profiles")
    prof_sub = prof.add_subparsers(dest="subcommand", required=True)
    v = prof_sub.add_parser("validate", help="check a profile file")
    v.add_argument("path")
    v.set_defaults(fn=_cmd_profile_validate)
    s = prof_sub.add_parser("synth", help="write a deterministic synthetic profile")
    s.add_argument("--modalities", type=int, default=2)
    s.add_argument("--max-batch", type=int, default=4, dest="max_batch")
    s.add_argument("--latency-ms", type=float, nargs=2, default=[5.0, 80.0],
                   dest="latency_ms", metavar=("LO", "HI"))
    s.add_argument("--accuracy", type=float, nargs=2, default=[0.5, 0.95],
                   metavar=("LO", "HI"))
    s.add_argument("--name", default="synthetic")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(fn=_cmd_profile_synth)

    mat = sub.add_parser("matrix", help="build or inspect strategy matrices")
    mat_sub = mat.add_subparsers(dest="subcommand", required=True)
    b = mat_sub.add_parser("build", help="solve all (size, alpha) cells")
    b.add_argument("--profile")
    b.add_argument("--sizes", nargs="+", required=True,
                   help="sizes or ranges, e.g. --sizes 1..8 12")
    b.add_argument("--alphas", nargs="+", required=True,
                   help="accuracy floors, or 'auto' for the recommended grid")
    b.add_argument("--out")
    b.set_defaults(fn=_cmd_matrix_build)
    i = mat_sub.add_parser("inspect", help="print one cell")
    i.add_argument("path")
    i.add_argument("--size", type=int, required=True)
    i.add_argument("--alpha", type=float, required=True)
    i.set_defaults(fn=_cmd_matrix_inspect)

    for name, fn in [("simulate", _cmd_simulate), ("compare", _cmd_compare)]:
        c = sub.add_parser(
            name,
            help="run one policy" if name == "simulate" else "run all four policies "
            "on one identical arrival stream",
        )
        c.add_argument("--config", help="JSON/YAML config; flags override its values")
        c.add_argument("--profile")
        c.add_argument("--matrix", help="prebuilt matrix (defaults to building one)")
        c.add_argument("--scenario", help="scripted arrivals file")
        c.add_argument("--qps", type=float, help="constant request rate")
        c.add_argument("--trace", help="request-count trace file")
        c.add_argument("--duration", type=int, help="workload duration, seconds")
        c.add_argument("--min-qps", type=int, dest="min_qps")
        c.add_argument("--max-qps", type=int, dest="max_qps")
        c.add_argument("--deadline-ms", type=float, dest="deadline_ms")
        c.add_argument("--accuracy-range", type=float, nargs=2, dest="accuracy_range",
                       metavar=("LO", "HI"))
        c.add_argument("--overhead-ms", type=float, dest="overhead_ms")
        c.add_argument("--discrepancy", type=float)
        c.add_argument("--watermark", type=int)
        c.add_argument("--window-ms", type=float, dest="window_ms")
        c.add_argument("--seed", type=int)
        c.add_argument("--out", help="directory for metric exports")
        if name == "simulate":
            c.add_argument("--policy", choices=[p.value for p in Policy])
        c.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "fn", None) is _cmd_simulate and args.policy is None:
        args.policy = "optimized"
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ProfileError, MatrixError, WorkloadError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
