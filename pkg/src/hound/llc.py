"""Low-level controller: wheel-speed loop and command arbitration.

The duty cycle is a feedforward term scaled by the battery state plus a PI
correction on the shared wheel-speed signal. Arbitration picks manual or
autonomous commands, applies the operator speed limit and always routes
steering through the rollover filter.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from hound import config
from hound.rps import Rps, RpsInput
from hound.vehicle import ControlCommand

MANUAL = "manual"
AUTONOMOUS = "autonomous"


@dataclass(frozen=True)
class LlcConfig:
    feedforward_gain: float = 0.04  # duty per m/s
    kp: float = 0.2
    ki: float = 0.1
    integral_limit: float = 0.3
    nominal_battery_V: float = 8.4
    mode: str = AUTONOMOUS
    operator_speed_limit_m_s: float = 23.0
    wheelspeed_max_m_s: float = 23.0

    def __post_init__(self):
        if min(self.feedforward_gain, self.kp, self.ki, self.integral_limit) < 0:
            raise ValueError("gains and the integral limit must be >= 0")
        if not self.nominal_battery_V > 0:
            raise ValueError("nominal_battery_V must be > 0")
        if self.mode not in (MANUAL, AUTONOMOUS):
            raise ValueError(f"mode must be {MANUAL!r} or {AUTONOMOUS!r}")
        if not 0 <= self.operator_speed_limit_m_s <= self.wheelspeed_max_m_s:
            raise ValueError("operator speed limit must lie in [0, wheelspeed_max_m_s]")

    def save(self, path: str | Path) -> None:
        config.dump_dataclass(self, path)

    @classmethod
    def load(cls, path: str | Path) -> LlcConfig:
        return config.load_dataclass(cls, path)


@dataclass
class SpeedLoop:
    """PI-plus-feedforward duty computation with a clamped integrator."""

    cfg: LlcConfig
    integral: float = 0.0

    def reset(self) -> None:
        self.integral = 0.0

    def duty(self, v_target: float, v_measured: float, battery_V: float, dt: float) -> float:
        return duty_cycle(v_target, v_measured, battery_V, self.cfg, dt, self)


def duty_cycle(v_target: float, v_measured: float, battery_V: float, cfg: LlcConfig, dt: float,
               loop: SpeedLoop | None = None) -> float:
    """Duty command in [-1, 1].

    ``D = (E_n / E_i) K_f V* + K_p e + K_i * integral(e)``. The feedforward
    grows as the battery sags so the motor sees the same average voltage.
    The integral lives in ``loop`` (none given: zero integral, no update).
    """
    if not battery_V > 0:
        raise ValueError("battery voltage must be > 0")
    err = v_target - v_measured
    integral = 0.0
    if loop is not None:
        lim = cfg.integral_limit
        # integral is kept in duty units so the clamp is a duty bound
        loop.integral = min(max(loop.integral + cfg.ki * err * dt, -lim), lim)
        integral = loop.integral
    ff = (cfg.nominal_battery_V / battery_V) * cfg.feedforward_gain * v_target
    d = ff + cfg.kp * err + integral
    return min(max(d, -1.0), 1.0)


@dataclass(frozen=True)
class OperatorInput:
    speed_limit_m_s: float = 23.0
    manual: ControlCommand = field(default_factory=ControlCommand)
    mode: str = AUTONOMOUS


def arbitrate(hlc_cmd: ControlCommand, operator: OperatorInput, rps: Rps | None,
              imu_acc: tuple[float, float, float], roll_rate: float, wheelspeed: float,
              roll: float = 0.0) -> ControlCommand:
    """Choose the command source, cap speed, filter steering.

    ``roll_rate`` and ``roll`` follow the RPS convention (left side up).
    With ``rps=None`` steering passes unchanged (used for baselines).
    """
    if operator.mode == MANUAL:
        steer, speed = operator.manual.steering_rad, operator.manual.wheelspeed_m_s
    else:
        steer = hlc_cmd.steering_rad
        speed = min(hlc_cmd.wheelspeed_m_s, operator.speed_limit_m_s)
    speed = max(speed, 0.0)
    if rps is not None:
        steer = rps.filter(RpsInput(imu_acc[1], imu_acc[2], roll_rate, wheelspeed, roll, steer))
    return ControlCommand(steer, speed)


__all__ = ["LlcConfig", "SpeedLoop", "duty_cycle", "OperatorInput", "arbitrate", "MANUAL", "AUTONOMOUS"]
