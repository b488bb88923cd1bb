"""Steering-only rollover prevention.

Two stages act on the commanded steering angle:

1. a static limiter that caps steering so the no-slip lateral acceleration
   stays under the critical value ``A_c = margin * A_z * RI_L``, widened
   by a slack angle;
2. a feedback corrector that, once the measured rollover index reaches
   the limit, asks an LQR for a change in lateral acceleration and turns
   it into a steering change through the inverted no-slip map.

Inputs are IMU specific force, roll rate and wheel speed only. Roll
angle and roll rate in :class:`RpsInput` are positive with the *left*
side up (right-hand rotation about the forward axis); callers holding
angles in the terrain convention (right side up) negate them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from hound import config
from hound.vehicle import VehicleParams

AZ_FLOOR = 0.5  # m/s^2, below this the rollover index is meaningless
MIN_SPEED = 0.5  # m/s, floor under V_w in the inverse map


class WeightlessError(ValueError):
    """Vertical specific force too small for a rollover index."""


class LqrConvergenceError(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(f"Riccati iteration did not converge: residual {residual:.3e} after {iterations} iterations")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class RpsConfig:
    ri_limit: float = 0.25 / (2 * 0.139)
    slack_rad: float = 0.3 * 0.38
    lqr_state_penalty: tuple[float, float] = (10.0, 10.0)
    lqr_control_penalty: float = 1.0
    update_period_s: float = 0.02
    com_height_m: float = 0.139
    roll_inertia_over_mass: float = 0.03 / 4.0
    wheelbase_m: float = 0.246
    safety_margin: float = 1.0
    steering_max_rad: float = 0.38
    gravity_m_s2: float = 9.81
    filter_cutoff_hz: float = 10.0
    gain_tolerance: float = 0.05
    feedback_enabled: bool = True

    def __post_init__(self):
        if not self.ri_limit > 0:
            raise ValueError("ri_limit must be > 0")
        if not 0 <= self.slack_rad < self.steering_max_rad:
            raise ValueError("slack_rad must lie in [0, steering_max_rad)")
        if len(self.lqr_state_penalty) != 2 or min(self.lqr_state_penalty) < 0:
            raise ValueError("lqr_state_penalty must be two non-negative diagonal entries")
        if not self.lqr_control_penalty > 0:
            raise ValueError("lqr_control_penalty must be > 0")
        if not self.update_period_s > 0:
            raise ValueError("update_period_s must be > 0")

    @classmethod
    def for_vehicle(cls, params: VehicleParams, slack_fraction: float = 0.3, **overrides) -> RpsConfig:
        """Config derived from vehicle geometry, slack as a fraction of max steering."""
        kw = dict(
            ri_limit=params.rollover_limit,
            slack_rad=slack_fraction * params.steering_max_rad,
            com_height_m=params.com_height_m,
            roll_inertia_over_mass=params.roll_inertia_kgm2 / params.mass_kg,
            wheelbase_m=params.wheelbase_m,
            steering_max_rad=params.steering_max_rad,
            gravity_m_s2=params.gravity_m_s2,
        )
        kw.update(overrides)
        return cls(**kw)

    def static_only(self) -> RpsConfig:
        return replace(self, feedback_enabled=False)

    def save(self, path: str | Path) -> None:
        config.dump_dataclass(self, path)

    @classmethod
    def load(cls, path: str | Path) -> RpsConfig:
        return config.load_dataclass(cls, path)


@dataclass(frozen=True)
class RpsInput:
    acc_y: float
    acc_z: float
    roll_rate: float = 0.0
    wheelspeed: float = 0.0
    roll: float = 0.0
    steering_cmd: float = 0.0


def rollover_index(acc_y: float, acc_z: float) -> float:
    """Signed ``A_y / A_z``.

    Raises:
        WeightlessError: if ``A_z`` is at or below 0.5 m/s^2.
    """
    if not acc_z > AZ_FLOOR:
        raise WeightlessError(f"A_z = {acc_z:.3f} m/s^2 is below the {AZ_FLOOR} floor")
    return acc_y / acc_z


def critical_lateral_acc(acc_z: float, cfg: RpsConfig) -> float:
    return cfg.safety_margin * max(acc_z, 0.0) * cfg.ri_limit


def static_steering_limit(inp: RpsInput, cfg: RpsConfig, critical_acc: float | None = None) -> tuple[float, float]:
    """Steering interval ``[lo, hi]`` from the no-slip lateral-acceleration cap.

    The left (positive) bound uses ``A_c - g sin(roll)`` and the right bound
    ``A_c + g sin(roll)``, so a bank with the left side up tightens left
    turns. Both bounds get the slack and are clipped to the physical range;
    neither bound ever crosses zero.
    """
    dmax = cfg.steering_max_rad
    v = inp.wheelspeed
    if v < MIN_SPEED:
        return -dmax, dmax
    a_c = critical_lateral_acc(inp.acc_z, cfg) if critical_acc is None else critical_acc
    gs = cfg.gravity_m_s2 * math.sin(inp.roll)
    scale = cfg.wheelbase_m / (v * v)
    hi = math.atan((a_c - gs) * scale) + cfg.slack_rad
    lo = -math.atan((a_c + gs) * scale) - cfg.slack_rad
    hi = min(max(hi, 0.0), dmax)
    lo = max(min(lo, 0.0), -dmax)
    return lo, hi


def coupling(acc_z: float, cfg: RpsConfig) -> float:
    """Roll-rate response to a unit rollover-index change over one tick."""
    return cfg.update_period_s * acc_z * cfg.com_height_m / cfg.roll_inertia_over_mass


def lqr_gain(k_coupling: float, cfg: RpsConfig, tol: float = 1e-10, max_iter: int = 100_000) -> np.ndarray:
    """Infinite-horizon discrete LQR gain for the (RI error, roll rate) model.

    ``x+ = A x + B u`` with ``A = [[1, 0], [K, 1]]`` and ``B = [1, K]^T``;
    the Riccati map is iterated until the gain it produces changes by less
    than ``tol`` (max-abs) between iterations. The gain, not ``P``, is
    tested because at ``K = 0`` the roll-rate state is neither controllable
    nor decaying and its ``P`` entry grows without bound while the gain is
    already fixed.

    Raises:
        LqrConvergenceError: if ``max_iter`` is reached first.
    """
    K = float(k_coupling)
    if not math.isfinite(K):
        raise ValueError("coupling must be finite")
    A = np.array([[1.0, 0.0], [K, 1.0]])
    B = np.array([[1.0], [K]])
    Q = np.diag(np.asarray(cfg.lqr_state_penalty, dtype=float))
    R = float(cfg.lqr_control_penalty)
    P = Q.copy()
    gain = np.zeros(2)
    residual = math.inf
    for it in range(1, max_iter + 1):
        BtP = B.T @ P
        G = (BtP @ A) / (R + (BtP @ B).item())
        P = Q + A.T @ P @ A - (A.T @ P @ B) @ G
        residual = float(np.max(np.abs(G.ravel() - gain)))
        gain = G.ravel()
        if residual < tol:
            return gain
    raise LqrConvergenceError(residual, max_iter)


def feedback_correction(inp: RpsInput, cfg: RpsConfig, gain=None, ri: float | None = None) -> float:
    """Steering change that drives the rollover index back to its limit.

    Args:
        inp: measurements and the current steering command.
        cfg: RPS configuration.
        gain: LQR gain row; computed from ``inp.acc_z`` when omitted.
        ri: rollover index to use (e.g. a filtered one); defaults to the
            raw ``A_y / A_z``.

    Raises:
        WeightlessError: if ``A_z`` is below the validity floor.
    """
    index = rollover_index(inp.acc_y, inp.acc_z) if ri is None else ri
    if ri is not None and not inp.acc_z > AZ_FLOOR:
        raise WeightlessError(f"A_z = {inp.acc_z:.3f} m/s^2 is below the {AZ_FLOOR} floor")
    side = 1.0 if index >= 0 else -1.0
    if gain is None:
        gain = lqr_gain(coupling(inp.acc_z, cfg), cfg)
    x1 = side * index - cfg.ri_limit
    x2 = side * inp.roll_rate
    u = -(gain[0] * x1 + gain[1] * x2)
    d_ay = side * u * inp.acc_z
    v = max(inp.wheelspeed, MIN_SPEED)
    return d_ay * math.cos(inp.steering_cmd) ** 2 * cfg.wheelbase_m / (v * v)


@dataclass(frozen=True)
class RpsRecord:
    """What the filter did on one tick (for the logs)."""

    ri: float
    lo: float
    hi: float
    correction: float
    active: bool
    valid: bool
    output: float


class Rps:
    """The rollover-prevention steering filter for one vehicle.

    State is limited to the last output (held while the index is invalid),
    the low-passed rollover index, the cached LQR gain and the correction
    accumulated while the feedback stage is engaged.
    """

    def __init__(self, cfg: RpsConfig):
        self.cfg = cfg
        self.reset()

    def reset(self) -> None:
        self._last: float | None = None
        self._ri: float | None = None
        self._gain_az: float | None = None
        self._gain = np.zeros(2)
        self._correction = 0.0
        self.gain_updates = 0
        self.record: RpsRecord | None = None

    def gain_for(self, acc_z: float) -> np.ndarray:
        ref = self._gain_az
        if ref is None or abs(acc_z - ref) > self.cfg.gain_tolerance * abs(ref):
            self._gain = lqr_gain(coupling(acc_z, self.cfg), self.cfg)
            self._gain_az = acc_z
            self.gain_updates += 1
        return self._gain

    def __call__(self, inp: RpsInput) -> float:
        return self.filter(inp)

    def filter(self, inp: RpsInput) -> float:
        cfg = self.cfg
        dmax = cfg.steering_max_rad
        cmd = min(max(inp.steering_cmd, -dmax), dmax)
        if not inp.acc_z > AZ_FLOOR:
            out = cmd if self._last is None else self._last
            self.record = RpsRecord(math.nan, -dmax, dmax, self._correction, False, False, out)
            self._last = out
            return out

        raw = inp.acc_y / inp.acc_z
        if self._ri is None:
            self._ri = raw
        else:
            tau = 1.0 / (2.0 * math.pi * cfg.filter_cutoff_hz)
            a = cfg.update_period_s / (cfg.update_period_s + tau)
            self._ri += a * (raw - self._ri)
        ri = self._ri

        lo, hi = static_steering_limit(inp, cfg)
        delta = min(max(cmd, lo), hi)

        active = False
        if cfg.feedback_enabled:
            side = 1.0 if ri >= 0 else -1.0
            if self._correction * side > 0:
                self._correction = 0.0  # index changed side; old correction would tighten the turn
            if abs(ri) >= cfg.ri_limit or self._correction != 0.0:
                active = True
                step = feedback_correction(
                    replace(inp, steering_cmd=delta), cfg, gain=self.gain_for(inp.acc_z), ri=ri
                )
                c = self._correction + step
                c = min(max(c, -2.0 * dmax), 2.0 * dmax)
                self._correction = min(c, 0.0) if side > 0 else max(c, 0.0)
        out = delta + self._correction
        # shrink only: never flip or enlarge the command
        if delta > 0:
            out = min(max(out, 0.0), delta)
        elif delta < 0:
            out = max(min(out, 0.0), delta)
        else:
            out = 0.0
        self.record = RpsRecord(ri, lo, hi, self._correction, active, True, out)
        self._last = out
        return out


def rps_filter(inp: RpsInput, cfg: RpsConfig, rps: Rps | None = None) -> float:
    """Functional entry point; pass an :class:`Rps` to keep hold-last state."""
    return (rps or Rps(cfg)).filter(inp)


__all__ = [
    "AZ_FLOOR", "RpsConfig", "RpsInput", "RpsRecord", "Rps", "WeightlessError", "LqrConvergenceError",
    "rollover_index", "critical_lateral_acc", "static_steering_limit", "coupling", "lqr_gain",
    "feedback_correction", "rps_filter",
]
