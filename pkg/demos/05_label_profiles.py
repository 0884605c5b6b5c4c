"""Tour of the label-shift protocols and the dataset CSV round trip.

Run: python demos/05_label_profiles.py
"""

import tempfile
from pathlib import Path

import numpy as np

from classalign import data

C, MAX = 8, 100
for kind in ("balanced", "mild", "extreme", "rs_ut_source", "rs_ut_target"):
    profile = data.make_profile(kind, C, MAX)
    print(f"{kind:14s} counts={profile.counts.tolist()}  total={profile.total}")

print("\nthe crossing protocol: source counts are the target counts rank-reversed,")
print("so every source majority class is a target minority class")
src = data.make_profile("rs_ut_source", C, MAX)
tgt = data.make_profile("rs_ut_target", C, MAX)
assert np.array_equal(src.counts, tgt.counts[::-1])

pair = data.generate_domain_pair(
    seed=5, num_classes=C, input_dim=3, shift=data.ShiftSpec((0.5, 0.2), 0.2),
    source_profile=src, target_profile=tgt)
print(f"\ngenerated {len(pair.source)} source / {len(pair.target)} target examples "
      f"in {pair.source.input_dim} dimensions")
print("target dataset labels are hidden (all -1):",
      set(pair.target.labels.tolist()))

with tempfile.TemporaryDirectory() as tmp:
    paths = data.write_pair(pair, Path(tmp) / "pair")
    loaded = data.load_pair(Path(tmp) / "pair")
    exact = loaded.source.features.tobytes() == pair.source.features.tobytes()
    print(f"CSV round trip lossless: {exact}")
    print("files written:", sorted(Path(p).name for p in paths.values()))
