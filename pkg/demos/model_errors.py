"""How far the two rollout models drift from the plant on near-limit driving."""

from __future__ import annotations

from hound.harness.experiments import run_model_compare
from hound.harness.scenario import Scenario

table = run_model_compare(Scenario(name="demo", protocol="model_compare", iterations=3))
print(f"{'model':10s} {'accel':>7s} {'rates':>7s} {'vel':>7s}   (normalised, worst = 1)")
for m in ("slip3d", "noslip3d"):
    e = table["normalized"][m]
    print(f"{m:10s} {e['acceleration']:7.3f} {e['rotation_rate']:7.3f} {e['velocity']:7.3f}")
