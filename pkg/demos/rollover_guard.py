"""Full lock at a fixed speed with and without the rollover guard.

Run with ``python3 demos/rollover_guard.py [speed]``. The stress plant
(grippy tyres, soft roll) tips over at this speed when nothing limits the
steering; the static limiter alone keeps it upright but turns very wide,
and the full filter turns much harder while staying on four wheels.
"""

from __future__ import annotations

import sys

from hound.harness.experiments import isolated_iteration
from hound.harness.scenario import Scenario


def main(speed: float = 6.0) -> None:
    sc = Scenario(name="demo", timeout_s=4.0)
    print(f"full left lock at {speed:.1f} m/s on the {sc.plant_variant} plant")
    print(f"{'arm':16s} {'rolled':>6s} {'peak Ay/Az':>10s} {'min Az':>7s}")
    for arm in sc.resolved_arms():
        s = isolated_iteration(sc, arm, 0, speed).summary
        print(f"{arm:16s} {str(s['rolled_over']):>6s} {s['peak_ratio']:10.3f} {s['min_az']:7.2f}")


if __name__ == "__main__":
    main(float(sys.argv[1]) if len(sys.argv) > 1 else 6.0)
