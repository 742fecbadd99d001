"""
Offline strategy search
=======================

A job of N requests can split across modality combinations and batch sizes:
the strategy space grows fast (a 20-request job with 3 per-request options
already has 231 strategies).  The exact solver finds the cheapest strategy
meeting an accuracy floor; a brute-force enumerator cross-checks it.
"""

from modserve import (brute_force_offline, count_strategies, demo_profile,
                      effective_accuracy, solve_offline, strategy_latency_ms)

profile = demo_profile()

print("strategy-space growth (multisets of per-request choices):")
for size, options in [(2, 3), (20, 3), (8, 7)]:
    print(f"  {size} requests x {options} options -> {count_strategies(size, options)}")

print("\ncheapest strategy for a 2-request job at various accuracy floors:")
for alpha in [0.0, 0.67, 0.685, 0.71, 0.75, 0.80, 0.81]:
    s = solve_offline(profile, 2, alpha)
    if s is None:
        print(f"  floor {alpha:.3f}: infeasible (above the profile's best)")
        continue
    print(f"  floor {alpha:.3f}: {s.describe(profile):<28s} "
          f"latency {strategy_latency_ms(s, profile):>6.1f} ms, "
          f"accuracy {effective_accuracy(s, profile)}")

print("\nbrute-force agreement on every (size <= 10, floor) cell:")
cells = agreements = 0
for size in range(10, 0, -1):
    for k in range(17):
        alpha = 0.05 * k
        fast = solve_offline(profile, size, alpha)
        slow = brute_force_offline(profile, size, alpha)
        cells += 1
        agreements += (fast == slow)
print(f"  {agreements}/{cells} cells identical (strategies, not just latency)")
