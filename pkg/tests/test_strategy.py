import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modserve.profile import SynthSpec, scaled_accuracy, synth_profile
from modserve.strategy import (
    MatrixError, SolverError, Strategy, all_modalities_strategy,
    brute_force_offline, build_matrix, candidates_for_job, default_alpha_grid,
    distinct_effective_accuracies, effective_accuracy, load_matrix,
    recommended_alphas, save_matrix, solve_offline, strategy_latency_ms,
    validate_matrix,
)

A, V, AV = 1, 2, 3  # demo-profile combo bitmasks


class TestStrategy:
    def test_canonical_order(self):
        s = Strategy.make([(AV, 1), (A, 2), (A, 1)])
        assert s.parts == ((A, 1), (A, 2), (AV, 1))
        assert s.job_size == 4

    def test_equal_strategies_compare_equal(self):
        assert Strategy.make([(A, 1), (V, 1)]) == Strategy.make([(V, 1), (A, 1)])

    def test_size_mismatch(self):
        with pytest.raises(SolverError):
            Strategy(parts=((A, 1),), job_size=2)

    def test_batch_cap_checked_against_profile(self, demo):
        with pytest.raises(SolverError):
            effective_accuracy(Strategy.make([(A, 3)]), demo)

    def test_all_modalities_strategy(self, demo):
        assert all_modalities_strategy(demo, 5).parts == ((AV, 1), (AV, 2), (AV, 2))
        assert all_modalities_strategy(demo, 2).parts == ((AV, 2),)


class TestEffectiveAccuracy:
    def test_audio_video_pair(self, demo):
        assert effective_accuracy(Strategy.make([(A, 1), (V, 1)]), demo) == 0.685

    def test_both_modalities(self, demo):
        assert effective_accuracy(Strategy.make([(AV, 2)]), demo) == 0.80

    def test_single_combo_average(self, demo):
        assert effective_accuracy(Strategy.make([(A, 2)]), demo) == 0.67

    def test_mixed_pair(self, demo):
        assert effective_accuracy(Strategy.make([(A, 1), (AV, 1)]), demo) == 0.735


class TestStrategyLatency:
    def test_pair(self, demo):
        assert strategy_latency_ms(Strategy.make([(AV, 1), (A, 1)]), demo) == 80.0

    def test_single_audio(self, demo):
        assert strategy_latency_ms(Strategy.make([(A, 1)]), demo) == 20.0

    def test_batched_both(self, demo):
        assert strategy_latency_ms(Strategy.make([(AV, 2)]), demo) == 120.0


class TestSolveOffline:
    def test_mid_floor(self, demo):
        s = solve_offline(demo, 2, 0.71)
        assert s.parts == ((A, 1), (AV, 1))
        assert strategy_latency_ms(s, demo) == 80.0
        assert effective_accuracy(s, demo) == 0.735

    def test_unconstrained_prefers_fewer_parts(self, demo):
        s = solve_offline(demo, 2, 0.0)
        assert s.parts == ((A, 2),)
        assert strategy_latency_ms(s, demo) == 40.0

    def test_top_floor(self, demo):
        s = solve_offline(demo, 2, 0.80)
        assert s.parts == ((AV, 2),)
        assert strategy_latency_ms(s, demo) == 120.0

    def test_unattainable(self, demo):
        assert solve_offline(demo, 2, 0.81) is None

    def test_deterministic(self, demo):
        assert solve_offline(demo, 7, 0.72) == solve_offline(demo, 7, 0.72)

    def test_preconditions(self, demo):
        with pytest.raises(SolverError):
            solve_offline(demo, 0, 0.5)
        with pytest.raises(SolverError):
            solve_offline(demo, 2, 1.5)

    def test_solution_satisfies_constraints(self, demo):
        for size in range(1, 13):
            for k in range(0, 17):
                alpha = 0.05 * k
                s = solve_offline(demo, size, alpha)
                if s is None:
                    assert scaled_accuracy(alpha) > scaled_accuracy(demo.max_accuracy)
                    continue
                assert sum(b for _, b in s.parts) == size
                credit = sum(demo.combo_accuracy_scaled(m) * b for m, b in s.parts)
                assert credit >= alpha * size * 10_000 - 1e-6


class TestBruteForce:
    def test_single_request(self, demo):
        assert brute_force_offline(demo, 1, 0.70).parts == ((V, 1),)

    def test_infeasible(self, demo):
        assert brute_force_offline(demo, 1, 0.90) is None

    def test_size_guard(self, demo):
        with pytest.raises(SolverError):
            brute_force_offline(demo, 17, 0.5)

    def test_agrees_with_solver_on_demo(self, demo):
        for size in range(12, 0, -1):
            for k in range(0, 17):
                alpha = 0.05 * k
                fast = solve_offline(demo, size, alpha)
                slow = brute_force_offline(demo, size, alpha)
                assert (fast is None) == (slow is None)
                if fast is not None:
                    assert fast.parts == slow.parts

    @pytest.mark.parametrize("seed", [0, 3])
    def test_agrees_on_synthetic(self, seed):
        p = synth_profile(SynthSpec(n_modalities=3, max_batch=3), seed)
        for size in (8, 5, 3, 1):
            for alpha in (0.0, 0.55, 0.72, 0.9, 1.0):
                fast = solve_offline(p, size, alpha)
                slow = brute_force_offline(p, size, alpha)
                assert (fast is None) == (slow is None)
                if fast is not None:
                    assert fast.parts == slow.parts


class TestBuildMatrix:
    def test_explicit_grid_cells(self, demo):
        m = build_matrix(demo, [1, 2], [0.67, 0.71, 0.80])
        assert len(m.cells) == 6
        cell = m.cell(2, 0.71)
        assert cell.latency_ms == 80.0
        assert cell.effective_accuracy == 0.735

    def test_smallest_cell(self, demo):
        m = build_matrix(demo, [1, 2], [0.67, 0.71, 0.80])
        cell = m.cell(1, 0.67)
        assert cell.strategy.parts == ((A, 1),)
        assert cell.latency_ms == 20.0

    def test_top_alpha_uses_full_combo_only(self, demo):
        m = build_matrix(demo, list(range(1, 7)), [0.80])
        for size in m.sizes:
            cell = m.cell(size, 0.80)
            assert all(mask == AV for mask, _ in cell.strategy.parts)

    def test_infeasible_cells_empty(self, demo):
        m = build_matrix(demo, [1, 2], [0.9])
        assert m.feasible_cells() == 0

    def test_monotonicity_validated(self, demo):
        m = build_matrix(demo, list(range(1, 9)), recommended_alphas(demo))
        validate_matrix(m, demo)  # must not raise
        for size in m.sizes:
            lats = [m.cell(size, a).latency_us for a in m.alphas if m.cell(size, a)]
            assert lats == sorted(lats)
        for alpha in m.alphas:
            lats = [m.cell(s, alpha).latency_us for s in m.sizes if m.cell(s, alpha)]
            assert lats == sorted(lats)

    def test_bad_axes(self, demo):
        with pytest.raises(MatrixError):
            build_matrix(demo, [2, 1], [0.5])
        with pytest.raises(MatrixError):
            build_matrix(demo, [1], [0.7, 0.5])
        with pytest.raises(MatrixError):
            build_matrix(demo, [1], [1.5])

    def test_feasibility_boundary(self, demo):
        m = build_matrix(demo, [1, 3], recommended_alphas(demo) + [0.81, 0.9])
        for (size, alpha), cell in m.cells.items():
            infeasible = scaled_accuracy(alpha) > scaled_accuracy(demo.max_accuracy)
            assert (cell is None) == infeasible


class TestAlphaGrids:
    def test_default_grid_includes_combo_accuracies(self, demo):
        grid = default_alpha_grid(demo)
        assert {0.67, 0.7, 0.8} <= set(grid)
        assert grid == sorted(grid)
        assert grid[0] == 0.5
        assert max(grid) == 0.8

    def test_distinct_effective_accuracies(self, demo):
        assert distinct_effective_accuracies(demo, 2) == [
            0.67, 0.685, 0.7, 0.735, 0.75, 0.8,
        ]

    def test_recommended_contains_pairwise_levels(self, demo):
        assert {0.685, 0.735} <= set(recommended_alphas(demo))


class TestCandidates:
    def test_frontier_mid_slo(self, demo, demo_matrix):
        cands = candidates_for_job(demo_matrix, 2, 0.71)
        assert [(c.latency_ms, c.effective_accuracy) for c in cands] == [
            (80.0, 0.735), (90.0, 0.75), (120.0, 0.8),
        ]

    def test_frontier_low_slo_includes_fastest(self, demo_matrix):
        cands = candidates_for_job(demo_matrix, 2, 0.65)
        assert (cands[0].latency_ms, cands[0].effective_accuracy) == (40.0, 0.67)

    def test_unattainable_slo(self, demo_matrix):
        assert candidates_for_job(demo_matrix, 2, 0.85) == []

    def test_unprofiled_size_errors(self, demo_matrix):
        with pytest.raises(MatrixError, match="not profiled"):
            candidates_for_job(demo_matrix, 3, 0.7)

    def test_every_candidate_meets_slo(self, demo_matrix):
        for slo in (0.5, 0.67, 0.71, 0.75, 0.8):
            for c in candidates_for_job(demo_matrix, 2, slo):
                assert c.effective_accuracy >= slo

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=1000),
           st.floats(min_value=0.0, max_value=1.0))
    def test_frontier_is_strictly_pareto(self, seed, slo):
        p = synth_profile(SynthSpec(n_modalities=2, max_batch=3), seed)
        m = build_matrix(p, [1, 2, 3], recommended_alphas(p))
        cands = candidates_for_job(m, 3, slo)
        for a, b in zip(cands, cands[1:]):
            assert a.latency_us < b.latency_us
            assert a.effective_accuracy < b.effective_accuracy


class TestMatrixPersistence:
    def test_round_trip(self, demo, demo_matrix, tmp_path):
        path = tmp_path / "m.json"
        save_matrix(demo_matrix, path)
        assert load_matrix(path, demo) == demo_matrix

    def test_truncated_file(self, demo_matrix, tmp_path):
        path = tmp_path / "m.json"
        save_matrix(demo_matrix, path)
        path.write_text(path.read_text()[:200])
        with pytest.raises(MatrixError, match="corrupt"):
            load_matrix(path)

    def test_wrong_format(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps({"format": "something-else"}))
        with pytest.raises(MatrixError, match="not a strategy matrix"):
            load_matrix(path)

    def test_monotonicity_violation_rejected(self, demo, demo_matrix, tmp_path):
        path = tmp_path / "m.json"
        save_matrix(demo_matrix, path)
        doc = json.loads(path.read_text())
        # inflate the cheapest cell's latency so latency decreases along alphas
        cells = {(c["size"], c["alpha"]): c for c in doc["cells"]}
        cells[(2, doc["alphas"][0])]["latency_ms"] = 10_000.0
        path.write_text(json.dumps(doc))
        with pytest.raises(MatrixError, match="latency decreases"):
            load_matrix(path)

    def test_profile_hash_mismatch(self, demo, demo_matrix, tmp_path):
        from modserve.profile import scale_latency

        path = tmp_path / "m.json"
        save_matrix(demo_matrix, path)
        with pytest.raises(MatrixError, match="built for"):
            load_matrix(path, scale_latency(demo, 2.0))

    def test_stale_cell_rejected_with_profile(self, demo, demo_matrix, tmp_path):
        path = tmp_path / "m.json"
        save_matrix(demo_matrix, path)
        doc = json.loads(path.read_text())
        target = next(c for c in doc["cells"] if c["size"] == 2 and c["latency_ms"] == 80.0)
        target["latency_ms"] = 81.0
        path.write_text(json.dumps(doc))
        with pytest.raises(MatrixError):
            load_matrix(path, demo)
