"""
Latency/accuracy profiles
=========================

A profile is the whole performance model: for every non-empty modality
combination it records the accuracy the model reaches and the latency of each
batch size.  This script builds the bundled audio/video demo profile, writes
it to disk, reloads it, and derives a cheaper variant.
"""

from pathlib import Path

from modserve import demo_profile, load_profile, save_profile, scale_latency

out = Path("/tmp/modserve_demo")
out.mkdir(exist_ok=True)

profile = demo_profile()
print(f"model {profile.name}: modalities {profile.modalities}, "
      f"max batch {profile.max_batch}")
print(f"{'combo':>12s} {'accuracy':>9s}  latency per batch size (ms)")
for combo in profile.combos():
    mask = combo.bitmask
    lats = [profile.part_latency_us(mask, b) / 1000 for b in range(1, profile.max_batch + 1)]
    print(f"{profile.combo_label(mask):>12s} {profile.combo_accuracy(mask):>9.2f}  {lats}")

# The audio-only path is 3x cheaper than processing both modalities: that gap
# is the entire opportunity the scheduler exploits.

path = out / "av-demo.yaml"
save_profile(profile, path)
assert load_profile(path) == profile
print(f"\nsaved and re-loaded {path} (lossless)")

# A reduced-precision deployment is just a scaled latency table.
half = scale_latency(profile, 0.5)
print(f"half-latency variant: audio batch 1 now "
      f"{half.part_latency_us(1, 1) / 1000} ms (was {profile.part_latency_us(1, 1) / 1000})")
