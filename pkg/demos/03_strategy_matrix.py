"""
The strategy matrix and per-job candidate frontiers
===================================================

All offline work lands in one table: the cheapest strategy per (job size,
accuracy floor) cell.  At admission a job pulls its candidate set from the
matrix: the Pareto frontier of strategies meeting its own floor, ordered so
moving right trades latency for accuracy.
"""

from pathlib import Path

from modserve import (build_matrix, candidates_for_job, demo_profile,
                      load_matrix, recommended_alphas, save_matrix)

profile = demo_profile()
alphas = recommended_alphas(profile)
matrix = build_matrix(profile, sizes=range(1, 5), alphas=alphas)
print(f"matrix: sizes {list(matrix.sizes)}, {len(matrix.alphas)} accuracy levels, "
      f"{matrix.feasible_cells()}/{len(matrix.cells)} cells feasible\n")

print("size-2 row (latency ms @ effective accuracy):")
for alpha in matrix.alphas:
    cell = matrix.cell(2, alpha)
    print(f"  floor {alpha:<6}: {cell.latency_ms:>6.1f} ms @ {cell.effective_accuracy}"
          f"   {cell.strategy.describe(profile)}")

print("\ncandidate frontiers: one job, three different accuracy floors")
for slo in (0.65, 0.71, 0.79):
    cands = candidates_for_job(matrix, 2, slo)
    frontier = ", ".join(f"({c.latency_ms:.0f}ms, {c.effective_accuracy})" for c in cands)
    print(f"  floor {slo}: {frontier}")

# Matrices serialize with the owning profile's content hash; loading against
# a different profile is rejected.
path = Path("/tmp/modserve_demo_matrix.json")
save_matrix(matrix, path)
assert load_matrix(path, profile) == matrix
print(f"\nsaved, re-validated and re-loaded {path}")
