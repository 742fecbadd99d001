"""Offline modality-selection optimization.

Given a profile, a job is served by splitting its requests into batches, each
batch running one modality combination.  A *strategy* is that multiset of
(combo, batch-size) parts.  The offline stage finds, for every (job size,
accuracy floor) pair, the strategy minimizing total latency subject to:

  1. the parts cover the job exactly (batch sizes sum to the job size), and
  2. the request-weighted average accuracy meets the floor.

The solver is an exact dynamic program over (requests covered, accumulated
accuracy credit), with accuracy discretized at 1e-4 — exact for profiles with
at most four decimal places of accuracy.  A brute-force enumerator provides an
independent oracle, and the per-cell results are assembled into a reusable
strategy matrix.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations_with_replacement
from pathlib import Path

import numpy as np

from .profile import ACC_SCALE, ModelProfile, scaled_accuracy

_INF = np.int64(2**62)
_MATRIX_FORMAT = "modserve-matrix"
_MATRIX_VERSION = 1


class SolverError(ValueError):
    pass


class MatrixError(ValueError):
    pass


@dataclass(frozen=True)
class Strategy:
    """A multiset of (combo bitmask, batch size) parts covering a job.

    Parts are kept sorted by (bitmask, batch) so equal strategies compare and
    hash equal.
    """

    parts: tuple[tuple[int, int], ...]
    job_size: int

    @staticmethod
    def make(parts, job_size: int | None = None) -> "Strategy":
        parts = tuple(sorted((int(m), int(b)) for m, b in parts))
        covered = sum(b for _, b in parts)
        if job_size is None:
            job_size = covered
        return Strategy(parts=parts, job_size=job_size)

    def __post_init__(self):
        if self.job_size < 1:
            raise SolverError(f"job_size must be >= 1, got {self.job_size}")
        if list(self.parts) != sorted(self.parts):
            raise SolverError("parts not in canonical order")
        if sum(b for _, b in self.parts) != self.job_size:
            raise SolverError("part batch sizes must sum to the job size")
        for mask, batch in self.parts:
            if mask < 1 or batch < 1:
                raise SolverError(f"invalid part ({mask}, {batch})")

    def validate_against(self, profile: ModelProfile) -> None:
        for mask, batch in self.parts:
            if mask > profile.all_modalities_mask:
                raise SolverError(f"combo {mask} not in profile")
            if batch > profile.max_batch:
                raise SolverError(f"batch {batch} exceeds max_batch {profile.max_batch}")

    def describe(self, profile: ModelProfile) -> str:
        return " | ".join(f"{profile.combo_label(m)} x{b}" for m, b in self.parts)


def effective_accuracy(strategy: Strategy, profile: ModelProfile) -> float:
    """Request-weighted average accuracy across the strategy's parts.

    Computed from scaled-integer credits, so it is exact at the profile's
    1e-4 accuracy resolution.
    """
    strategy.validate_against(profile)
    return accuracy_credit(strategy, profile) / (ACC_SCALE * strategy.job_size)


def accuracy_credit(strategy: Strategy, profile: ModelProfile) -> int:
    """Total scaled accuracy credit (sum of per-request scaled accuracies)."""
    return sum(profile.combo_accuracy_scaled(m) * b for m, b in strategy.parts)


def strategy_latency_us(strategy: Strategy, profile: ModelProfile) -> int:
    """Total latency of running the parts back to back, in microseconds."""
    strategy.validate_against(profile)
    return sum(profile.part_latency_us(m, b) for m, b in strategy.parts)


def strategy_latency_ms(strategy: Strategy, profile: ModelProfile) -> float:
    return strategy_latency_us(strategy, profile) / 1000.0


def all_modalities_strategy(profile: ModelProfile, job_size: int) -> Strategy:
    """Modality-agnostic covering: every request through the full combo, in
    the largest batches the profile allows."""
    full = profile.all_modalities_mask
    parts = [(full, profile.max_batch)] * (job_size // profile.max_batch)
    if job_size % profile.max_batch:
        parts.append((full, job_size % profile.max_batch))
    return Strategy.make(parts, job_size)


def _credit_threshold(alpha: float, job_size: int) -> int:
    """Smallest integer credit satisfying credit >= alpha * size * ACC_SCALE.

    The 1e-6 guard keeps thresholds exact when alpha has at most four decimal
    places; anything finer rounds conservatively up.
    """
    return max(0, math.ceil(alpha * job_size * ACC_SCALE - 1e-6))


def _dp_items(profile: ModelProfile) -> list[tuple[int, int, int, int]]:
    """(mask, batch, latency_us, credit) for every combo/batch pair, in
    canonical (mask, batch) order."""
    items = []
    for mask in range(1, profile.all_modalities_mask + 1):
        credit_per = profile.combo_accuracy_scaled(mask)
        for batch in range(1, profile.max_batch + 1):
            items.append((mask, batch, profile.part_latency_us(mask, batch), credit_per * batch))
    return items


class _DpTables:
    """Min-latency table over (requests covered, accuracy credit).

    ``dp[r, c]`` is the minimum total latency of any strategy covering r
    requests with total credit exactly ``c * gcd``; ``nparts`` the minimum
    part count among those latency-minimal strategies.  One table answers
    queries for every job size up to ``max_size`` and every accuracy floor.
    """

    def __init__(self, profile: ModelProfile, max_size: int):
        self.profile = profile
        self.max_size = max_size
        self.items = _dp_items(profile)
        self.gcd = math.gcd(*(profile.combo_accuracy_scaled(m)
                              for m in range(1, profile.all_modalities_mask + 1))) or 1
        unit = max(profile.combo_accuracy_scaled(m) // self.gcd
                   for m in range(1, profile.all_modalities_mask + 1))
        width = max_size * unit + 1
        self.dp = np.full((max_size + 1, width), _INF, dtype=np.int64)
        self.nparts = np.full((max_size + 1, width), np.iinfo(np.int32).max, dtype=np.int32)
        self.dp[0, 0] = 0
        self.nparts[0, 0] = 0

        for r in range(1, max_size + 1):
            limit = r * unit + 1  # credits beyond r requests' best are unreachable
            for _, batch, lat, credit in self.items:
                if batch > r:
                    continue
                ci = credit // self.gcd
                src = self.dp[r - batch, : limit - ci]
                src_np = self.nparts[r - batch, : limit - ci]
                cand = src + lat
                cand_np = src_np + 1
                cur = self.dp[r, ci:limit]
                cur_np = self.nparts[r, ci:limit]
                better = cand < cur
                tied = better | ((cand == cur) & (cand_np < cur_np))
                np.copyto(cur_np, cand_np, where=tied)
                np.copyto(cur, cand, where=better)

    def solve(self, job_size: int, alpha: float) -> tuple[Strategy, int, int] | None:
        """Optimal (strategy, latency_us, credit) for one cell, or None."""
        if job_size > self.max_size:
            raise SolverError(f"table built for sizes <= {self.max_size}")
        thr_idx = -(-_credit_threshold(alpha, job_size) // self.gcd)
        row = self.dp[job_size]
        if thr_idx >= row.shape[0]:
            return None
        feasible = row[thr_idx:]
        best = feasible.min()
        if best >= _INF:
            return None
        # Ties: prefer the highest credit, then the fewest parts, then the
        # lexicographically smallest part list (reconstructed greedily).
        c_idx = thr_idx + int(np.flatnonzero(feasible == best)[-1])
        return self._reconstruct(job_size, c_idx), int(best), c_idx * self.gcd

    def _reconstruct(self, r: int, c_idx: int) -> Strategy:
        job_size = r
        parts = []
        p = int(self.nparts[r, c_idx])
        lat = int(self.dp[r, c_idx])
        while r > 0:
            for mask, batch, item_lat, credit in self.items:
                ci = credit // self.gcd
                if batch > r or ci > c_idx or item_lat > lat:
                    continue
                if (self.dp[r - batch, c_idx - ci] == lat - item_lat
                        and self.nparts[r - batch, c_idx - ci] == p - 1):
                    parts.append((mask, batch))
                    r -= batch
                    c_idx -= ci
                    lat -= item_lat
                    p -= 1
                    break
            else:
                raise SolverError("table reconstruction failed")  # pragma: no cover
        return Strategy.make(parts, job_size)


class _GrowingCache:
    """Keeps the largest artifact built per profile; smaller queries reuse it.

    Bounded LRU over profiles.  Descending-size sweeps build each profile's
    artifact exactly once.
    """

    def __init__(self, build, max_profiles: int = 4):
        self._build = build
        self._max_profiles = max_profiles
        self._entries: dict = {}

    def get(self, profile: ModelProfile, size: int):
        entry = self._entries.pop(profile, None)
        if entry is None or entry.max_size < size:
            entry = self._build(profile, max(8, -(-size // 4) * 4))
        self._entries[profile] = entry
        while len(self._entries) > self._max_profiles:
            self._entries.pop(next(iter(self._entries)))
        return entry


_tables = _GrowingCache(_DpTables)


def _check_offline_args(profile: ModelProfile, job_size: int, alpha: float) -> None:
    if job_size < 1:
        raise SolverError(f"job_size must be >= 1, got {job_size}")
    if not 0.0 <= alpha <= 1.0:
        raise SolverError(f"alpha must be in [0, 1], got {alpha}")


def solve_offline(profile: ModelProfile, job_size: int, alpha: float) -> Strategy | None:
    """Minimum-latency strategy covering ``job_size`` requests with effective
    accuracy at least ``alpha``, or None when the floor is unattainable.

    Deterministic: ties go to higher effective accuracy, then fewer parts,
    then canonical part order.
    """
    _check_offline_args(profile, job_size, alpha)
    result = _tables.get(profile, job_size).solve(job_size, alpha)
    return result[0] if result else None


# --- brute-force oracle ----------------------------------------------------

_MAX_BRUTE_SIZE = 16
_MAX_BRUTE_STATES = 20_000_000


class _Enumeration:
    """Every part multiset of total batch weight <= max_size, as flat arrays.

    Pure enumeration: multisets are built item by item (items in canonical
    order, counts ascending) with no pruning or dominance reasoning, so this
    stays independent of the dynamic program it cross-checks.  Rows keep a
    parent link so a winning multiset can be read back out; rows are bucketed
    by weight so one pass serves every job size up to max_size.
    """

    def __init__(self, profile: ModelProfile, max_size: int):
        self.max_size = max_size
        self.items = _dp_items(profile)
        weight = np.zeros(1, dtype=np.int32)
        lat = np.zeros(1, dtype=np.int64)
        credit = np.zeros(1, dtype=np.int64)
        parts = np.zeros(1, dtype=np.int32)
        parent = np.full(1, -1, dtype=np.int32)
        added = np.full(1, -1, dtype=np.int32)  # item index and count, packed

        for idx, (_, batch, item_lat, item_credit) in enumerate(self.items):
            base = len(weight)  # extend only states built from earlier items
            pw, pl, pc, pp, ppar, pa = [weight], [lat], [credit], [parts], [parent], [added]
            for count in range(1, max_size // batch + 1):
                ok = np.flatnonzero(weight[:base] + count * batch <= max_size)
                if ok.size == 0:
                    break
                pw.append(weight[ok] + count * batch)
                pl.append(lat[ok] + count * item_lat)
                pc.append(credit[ok] + count * item_credit)
                pp.append(parts[ok] + count)
                ppar.append(ok.astype(np.int32))
                pa.append(np.full(ok.size, idx * 64 + count, dtype=np.int32))
            if len(pw) == 1:
                continue
            weight = np.concatenate(pw)
            lat = np.concatenate(pl)
            credit = np.concatenate(pc)
            parts = np.concatenate(pp)
            parent = np.concatenate(ppar)
            added = np.concatenate(pa)
            if len(weight) > _MAX_BRUTE_STATES:
                raise SolverError("brute-force enumeration too large")

        self.weight = weight
        self.lat = lat
        self.credit = credit
        self.parts = parts
        self.parent = parent
        self.added = added
        self.by_weight = {
            w: np.flatnonzero(self.weight == w) for w in range(1, max_size + 1)
        }

    def read_back(self, row: int) -> Strategy:
        parts = []
        while row >= 0 and self.added[row] >= 0:
            idx, count = divmod(int(self.added[row]), 64)
            mask, batch, _, _ = self.items[idx]
            parts.extend([(mask, batch)] * count)
            row = int(self.parent[row])
        return Strategy.make(parts)


_enumerations = _GrowingCache(_Enumeration, max_profiles=2)


def brute_force_offline(profile: ModelProfile, job_size: int, alpha: float) -> Strategy | None:
    """Exhaustive-enumeration reference for solve_offline (same tie-break)."""
    _check_offline_args(profile, job_size, alpha)
    if job_size > _MAX_BRUTE_SIZE:
        raise SolverError(f"brute force limited to job sizes <= {_MAX_BRUTE_SIZE}")
    enum = _enumerations.get(profile, job_size)
    rows = enum.by_weight[job_size]
    thr = _credit_threshold(alpha, job_size)
    feasible = rows[enum.credit[rows] >= thr]
    if feasible.size == 0:
        return None
    lat = enum.lat[feasible]
    pool = feasible[lat == lat.min()]
    pool = pool[enum.credit[pool] == enum.credit[pool].max()]
    pool = pool[enum.parts[pool] == enum.parts[pool].min()]
    return min((enum.read_back(int(r)) for r in pool), key=lambda s: s.parts)


# --- strategy matrix ---------------------------------------------------------


@dataclass(frozen=True)
class MatrixCell:
    strategy: Strategy
    latency_us: int
    effective_accuracy: float
    credit: int

    @property
    def latency_ms(self) -> float:
        return self.latency_us / 1000.0


@dataclass(frozen=True)
class StrategyMatrix:
    """Optimal strategy per (job size, accuracy floor) grid cell.

    Empty (None) cells mark infeasible floors.  Built once per profile;
    immutable afterwards.
    """

    profile_name: str
    profile_fingerprint: str
    modalities: tuple[str, ...]
    max_batch: int
    sizes: tuple[int, ...]
    alphas: tuple[float, ...]
    cells: dict

    def cell(self, size: int, alpha: float) -> MatrixCell | None:
        return self.cells[(size, alpha)]

    def feasible_cells(self) -> int:
        return sum(1 for c in self.cells.values() if c is not None)

    def __hash__(self):
        # the cells dict blocks the generated hash; the grid plus the profile
        # hash identifies a matrix for caching purposes
        return hash((self.profile_fingerprint, self.sizes, self.alphas))


def default_alpha_grid(profile: ModelProfile, step: float = 0.05, start: float = 0.50) -> list[float]:
    """0.05-spaced accuracy levels up to the profile's best accuracy, plus the
    exact per-combo accuracies.

    Guarantees a floor equal to any combo accuracy has its own column, so the
    fastest strategy for such a floor is always present in the matrix.
    """
    levels = {}
    k = 0
    while True:
        v = round(start + k * step, 10)
        if scaled_accuracy(v) > scaled_accuracy(profile.max_accuracy):
            break
        levels[scaled_accuracy(v)] = v
        k += 1
    for acc in profile.accuracy:
        levels.setdefault(scaled_accuracy(acc), acc)
    return sorted(levels.values())


def distinct_effective_accuracies(profile: ModelProfile, job_size: int) -> list[float]:
    """Every effective accuracy attainable by a job of ``job_size`` requests.

    Enumerates per-request combo choices (batch splits do not change the
    average).  Useful for building maximally detailed alpha grids.
    """
    masks = range(1, profile.all_modalities_mask + 1)
    credits = {
        sum(profile.combo_accuracy_scaled(m) for m in choice)
        for choice in combinations_with_replacement(masks, job_size)
    }
    return sorted(credit / (ACC_SCALE * job_size) for credit in credits)


def recommended_alphas(profile: ModelProfile, detail_size: int = 2) -> list[float]:
    """Alpha grid for simulation matrices: the default grid plus every
    effective accuracy reachable by small jobs, so small-job frontiers are
    complete."""
    levels = set(default_alpha_grid(profile))
    for size in range(1, detail_size + 1):
        levels.update(distinct_effective_accuracies(profile, size))
    return sorted(levels)


def build_matrix(profile: ModelProfile, sizes, alphas) -> StrategyMatrix:
    """Solve every (size, alpha) cell and assemble the matrix.

    One shared table answers all cells, so cost grows with max(sizes), not
    with the number of cells.
    """
    sizes = tuple(int(s) for s in sizes)
    alphas = tuple(float(a) for a in alphas)
    if not sizes or list(sizes) != sorted(set(sizes)) or sizes[0] < 1:
        raise MatrixError("sizes must be ascending positive integers")
    if not alphas or list(alphas) != sorted(set(alphas)):
        raise MatrixError("alphas must be ascending")
    if not all(0.0 <= a <= 1.0 for a in alphas):
        raise MatrixError("alphas must lie in [0, 1]")

    tables = _tables.get(profile, max(sizes))
    cells = {}
    for size in sizes:
        for alpha in alphas:
            solved = tables.solve(size, alpha)
            if solved is None:
                cells[(size, alpha)] = None
            else:
                strategy, lat_us, credit = solved
                cells[(size, alpha)] = MatrixCell(
                    strategy=strategy,
                    latency_us=lat_us,
                    effective_accuracy=effective_accuracy(strategy, profile),
                    credit=credit,
                )
    matrix = StrategyMatrix(
        profile_name=profile.name,
        profile_fingerprint=profile.fingerprint(),
        modalities=profile.modalities,
        max_batch=profile.max_batch,
        sizes=sizes,
        alphas=alphas,
        cells=cells,
    )
    validate_matrix(matrix)
    return matrix


def validate_matrix(matrix: StrategyMatrix, profile: ModelProfile | None = None) -> None:
    """Check matrix invariants; with a profile, also re-derive every cell's
    latency and accuracy and verify the content hash."""
    for (size, alpha), cell in matrix.cells.items():
        if cell is None:
            continue
        if cell.strategy.job_size != size:
            raise MatrixError(f"cell ({size}, {alpha}): strategy covers wrong size")
        if cell.credit < _credit_threshold(alpha, size):
            raise MatrixError(f"cell ({size}, {alpha}): accuracy below its floor")
        for _, batch in cell.strategy.parts:
            if batch > matrix.max_batch:
                raise MatrixError(f"cell ({size}, {alpha}): batch exceeds max_batch")
    for size in matrix.sizes:
        lats = [matrix.cells[(size, a)].latency_us
                for a in matrix.alphas if matrix.cells[(size, a)] is not None]
        if any(b < a for a, b in zip(lats, lats[1:])):
            raise MatrixError(f"latency decreases along alphas at size {size}")
        feasible = [matrix.cells[(size, a)] is not None for a in matrix.alphas]
        if any(a and not b for a, b in zip(feasible[1:], feasible)):
            raise MatrixError(f"feasibility not downward-closed at size {size}")
    for alpha in matrix.alphas:
        lats = [matrix.cells[(s, alpha)].latency_us
                for s in matrix.sizes if matrix.cells[(s, alpha)] is not None]
        if any(b < a for a, b in zip(lats, lats[1:])):
            raise MatrixError(f"latency decreases along sizes at alpha {alpha}")
    if profile is not None:
        if matrix.profile_fingerprint != profile.fingerprint():
            raise MatrixError(
                f"matrix was built for '{matrix.profile_name}' "
                f"({matrix.profile_fingerprint}), not this profile"
            )
        for (size, alpha), cell in matrix.cells.items():
            if cell is None:
                continue
            if strategy_latency_us(cell.strategy, profile) != cell.latency_us:
                raise MatrixError(f"cell ({size}, {alpha}): stored latency is stale")
            if effective_accuracy(cell.strategy, profile) != cell.effective_accuracy:
                raise MatrixError(f"cell ({size}, {alpha}): stored accuracy is stale")


# --- candidate sets ----------------------------------------------------------


@dataclass(frozen=True)
class Candidate:
    strategy: Strategy
    latency_us: int
    effective_accuracy: float
    credit: int

    @property
    def latency_ms(self) -> float:
        return self.latency_us / 1000.0


def candidates_for_job(matrix: StrategyMatrix, job_size: int,
                       accuracy_slo: float) -> list[Candidate]:
    """Pareto frontier of matrix strategies meeting the job's accuracy floor,
    ascending by latency (hence ascending by accuracy).

    ``job_size`` must be one of the matrix's profiled sizes; the scheduler is
    responsible for rounding unprofiled sizes up before the lookup.
    """
    if job_size not in matrix.sizes:
        raise MatrixError(
            f"job size {job_size} not profiled; rebuild the matrix to include it"
        )
    slo_scaled = scaled_accuracy(accuracy_slo)
    pool = {}
    for alpha in matrix.alphas:
        if scaled_accuracy(alpha) < slo_scaled:
            continue
        cell = matrix.cells[(job_size, alpha)]
        if cell is not None:
            pool[cell.strategy] = cell
    ranked = sorted(pool.values(), key=lambda c: (c.latency_us, -c.credit))
    frontier: list[Candidate] = []
    for cell in ranked:
        if frontier and cell.credit <= frontier[-1].credit:
            continue  # dominated: slower (or equal) and no more accurate
        frontier.append(Candidate(cell.strategy, cell.latency_us,
                                  cell.effective_accuracy, cell.credit))
    return frontier


# --- persistence -------------------------------------------------------------


def save_matrix(matrix: StrategyMatrix, path: str | Path) -> None:
    labels = {}
    for mask in range(1, (1 << len(matrix.modalities))):
        members = [m for k, m in enumerate(matrix.modalities) if mask >> k & 1]
        labels[mask] = "+".join(members)
    cells = []
    for (size, alpha), cell in sorted(matrix.cells.items()):
        if cell is None:
            continue
        cells.append({
            "size": size,
            "alpha": alpha,
            "parts": [[labels[m], b] for m, b in cell.strategy.parts],
            "latency_ms": cell.latency_us / 1000.0,
            "effective_accuracy": cell.effective_accuracy,
        })
    doc = {
        "format": _MATRIX_FORMAT,
        "version": _MATRIX_VERSION,
        "model": matrix.profile_name,
        "profile_fingerprint": matrix.profile_fingerprint,
        "modalities": list(matrix.modalities),
        "max_batch": matrix.max_batch,
        "sizes": list(matrix.sizes),
        "alphas": list(matrix.alphas),
        "cells": cells,
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_matrix(path: str | Path, profile: ModelProfile | None = None) -> StrategyMatrix:
    """Load a matrix document, re-validating all invariants.

    When a profile is supplied, cells are re-derived against it and the
    content hash must match.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MatrixError(f"corrupt matrix file: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != _MATRIX_FORMAT:
        raise MatrixError("not a strategy matrix file")
    if doc.get("version") != _MATRIX_VERSION:
        raise MatrixError(f"unsupported matrix version {doc.get('version')!r}")
    try:
        modalities = tuple(doc["modalities"])
        masks = {}
        for mask in range(1, 1 << len(modalities)):
            members = [m for k, m in enumerate(modalities) if mask >> k & 1]
            masks["+".join(members)] = mask
        sizes = tuple(int(s) for s in doc["sizes"])
        alphas = tuple(float(a) for a in doc["alphas"])
        cells = {(s, a): None for s in sizes for a in alphas}
        for entry in doc["cells"]:
            size, alpha = int(entry["size"]), float(entry["alpha"])
            if (size, alpha) not in cells:
                raise MatrixError(f"cell ({size}, {alpha}) outside the declared grid")
            strategy = Strategy.make(
                [(masks[label], int(b)) for label, b in entry["parts"]], size
            )
            cells[(size, alpha)] = MatrixCell(
                strategy=strategy,
                latency_us=int(round(float(entry["latency_ms"]) * 1000)),
                effective_accuracy=float(entry["effective_accuracy"]),
                credit=_cell_credit(entry, size),
            )
        matrix = StrategyMatrix(
            profile_name=str(doc["model"]),
            profile_fingerprint=str(doc["profile_fingerprint"]),
            modalities=modalities,
            max_batch=int(doc["max_batch"]),
            sizes=sizes,
            alphas=alphas,
            cells=cells,
        )
    except MatrixError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise MatrixError(f"malformed matrix file: {exc!r}") from exc
    validate_matrix(matrix, profile)
    return matrix


def _cell_credit(entry: dict, size: int) -> int:
    return round(float(entry["effective_accuracy"]) * size * ACC_SCALE)
