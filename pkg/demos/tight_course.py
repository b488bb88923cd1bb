"""One lap of the Tight serpentine, planner in charge, guard on and off.

The planner's friction estimate is a third too low. Its rollouts saturate
early, so its rollover cost sees less lateral acceleration than the
plant's grippier tyres actually produce, and without the guard the car
sometimes leans past its tipping point. About 15 s of wall time per arm.

    python3 demos/tight_course.py [iteration]
"""

from __future__ import annotations

import sys
import time

from hound.harness.experiments import in_loop_iteration
from hound.harness.scenario import Scenario


def main(iteration: int = 0) -> None:
    sc = Scenario(name="demo", protocol="in_loop", path="tight")
    for arm in ("rps_off", "rps_on"):
        t0 = time.perf_counter()
        rec = in_loop_iteration(sc, arm, iteration)
        s = rec.summary
        print(f"{arm:8s} rollovers {s['rollovers']}  TTC {s['ttc_np']:.2f} s  with penalty {s['ttc_p']:.2f} s"
              f"  ({time.perf_counter() - t0:.0f} s wall)")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 0)
