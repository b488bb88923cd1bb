"""hound: terrain-aware MPPI control with a steering-only rollover guard.

Subpackages and modules:

* :mod:`hound.vehicle` - parameters, states, frames and path geometry
* :mod:`hound.terrain` - elevation maps and tyre contact fitting
* :mod:`hound.dynamics` - slip3d / noslip3d rollout models
* :mod:`hound.plant` - rollover-capable ground-truth simulator
* :mod:`hound.rps` - rollover index, static limiter, LQR corrector
* :mod:`hound.llc` - duty-cycle loop and command arbitration
* :mod:`hound.mppi` - sampling-based planner
* :mod:`hound.harness` - experiment protocols, metrics and outputs
"""

__version__ = "0.1.0"
