"""Scenario files and the path templates used by the in-loop protocol."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from pathlib import Path as FsPath

import numpy as np

from hound import config
from hound.config import ConfigError
from hound.plant import PlantParams, big_plant, small_plant
from hound.terrain import TerrainError, TerrainSpec
from hound.vehicle import Path, resample_polyline

PROTOCOLS = ("isolated_rollover", "in_loop", "model_compare", "replay")

ISOLATED_ARMS = ("no_prevention", "static_limiter", "full_rps")
IN_LOOP_ARMS = ("rps_on", "rps_off")
MODELS = ("slip3d", "noslip3d", "plant")

DEFAULT_SWEEPS = {"small": (4.8, 7.2), "big": (9.6, 14.4)}


@dataclass(frozen=True)
class Scenario:
    """Everything one batch needs, flat so it round-trips through a key-value file.

    Empty tuples mean "use the per-protocol default" (arms, speed sweep,
    broad-sweep speeds). ``plant_variant`` picks a preset on top of the
    vehicle: ``nominal``, ``stress`` or ``offroad``; ``plant_file`` loads
    explicit parameters instead.
    """

    name: str = "scenario"
    protocol: str = "isolated_rollover"
    terrain: str = "flat"
    vehicle: str = "small"
    plant_variant: str = "stress"
    plant_file: str = ""
    seed: int = 0
    iterations: int = 50
    arms: tuple[str, ...] = ()
    workers: int = 1
    plant_dt_s: float = 0.001
    llc_period_s: float = 0.02

    # isolated rollover
    speed_sweep_m_s: tuple[float, ...] = ()
    steer_onset_s: float = 0.5
    timeout_s: float = 8.0
    slack_fraction: float = 0.3
    broad_iterations: int = 0
    broad_speeds_m_s: tuple[float, ...] = ()

    # in the loop
    path: str = "tight"
    start_noise_m: float = 0.3
    start_noise_rad: float = 0.1
    friction_mismatch: float = 0.67
    penalty_s: float = 1.0
    speed_limit_m_s: float = 5.0
    completion_timeout_s: float = 60.0
    goal_tolerance_m: float = 0.5
    mppi_samples: int = 256
    mppi_period_s: float = 0.04

    # model comparison
    maneuver_duration_s: float = 12.0
    sequence_steps: int = 50
    model_dt_s: float = 0.02
    max_lateral_acc_m_s2: float = 7.0
    max_speed_m_s: float = 8.0

    # replay
    replay_log: str = ""

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.vehicle not in DEFAULT_SWEEPS:
            raise ConfigError(f"vehicle must be 'small' or 'big', got {self.vehicle!r}")
        if self.plant_variant not in ("nominal", "stress", "offroad"):
            raise ConfigError(f"unknown plant_variant {self.plant_variant!r}")
        sweep = self.speed_sweep_m_s
        if sweep and (len(sweep) != 2 or not 0 < sweep[0] <= sweep[1]):
            raise ConfigError("speed_sweep_m_s must be two ordered positive speeds")
        try:
            TerrainSpec.parse(self.terrain)
        except (TerrainError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        known = {"isolated_rollover": ISOLATED_ARMS, "in_loop": IN_LOOP_ARMS, "model_compare": MODELS}
        allowed = known.get(self.protocol)
        if allowed is not None:
            bad = [a for a in self.arms if a not in allowed]
            if bad:
                raise ConfigError(f"unknown arms {bad} for protocol {self.protocol}")
        for name in ("plant_dt_s", "llc_period_s", "timeout_s", "model_dt_s", "mppi_period_s",
                     "completion_timeout_s", "maneuver_duration_s"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if self.penalty_s < 0:
            raise ConfigError("penalty_s must be >= 0")
        if not 0 < self.friction_mismatch <= 2:
            raise ConfigError("friction_mismatch must lie in (0, 2]")
        if self.protocol == "replay" and not self.replay_log:
            raise ConfigError("replay needs replay_log")

    # ---- resolution helpers -------------------------------------------------
    def resolved_arms(self) -> tuple[str, ...]:
        if self.arms:
            return self.arms
        return {"isolated_rollover": ISOLATED_ARMS, "in_loop": IN_LOOP_ARMS,
                "model_compare": MODELS, "replay": ("replay",)}[self.protocol]

    def sweep(self) -> tuple[float, float]:
        return tuple(self.speed_sweep_m_s) if self.speed_sweep_m_s else DEFAULT_SWEEPS[self.vehicle]

    def sweep_speed(self, i: int) -> float:
        lo, hi = self.sweep()
        if self.iterations == 1:
            return lo
        return lo + (hi - lo) * i / (self.iterations - 1)

    def broad_speeds(self) -> tuple[float, ...]:
        if self.broad_speeds_m_s:
            return tuple(self.broad_speeds_m_s)
        top = self.sweep()[1]
        return tuple(top * f for f in (1.0, 4.0 / 3.0, 5.0 / 3.0, 2.0))

    def plant_params(self) -> PlantParams:
        if self.plant_file:
            return PlantParams.load(self.plant_file)
        base = small_plant() if self.vehicle == "small" else big_plant()
        if self.plant_variant == "stress":
            return base.stressed()
        if self.plant_variant == "offroad":
            return base.offroad()
        return base

    def terrain_spec(self) -> TerrainSpec:
        return TerrainSpec.parse(self.terrain)

    def reference_path(self) -> Path:
        if self.path == "tight":
            return tight_path()
        if self.path == "shallow":
            return shallow_path()
        return Path.load(self.path)

    def save(self, path: str | FsPath) -> None:
        config.dump_dataclass(self, path)

    @classmethod
    def load(cls, path: str | FsPath) -> Scenario:
        return config.load_dataclass(cls, path)

    def with_(self, **changes) -> Scenario:
        return replace(self, **changes)


def scenario_mapping(sc: Scenario) -> dict:
    return {f.name: getattr(sc, f.name) for f in fields(sc)}


def _arc(center, radius, a0, a1, n):
    a = np.linspace(a0, a1, n)
    return np.stack([center[0] + radius * np.cos(a), center[1] + radius * np.sin(a)], axis=1)


def tight_path(radius: float = 2.5, straight: float = 5.0, turns: int = 4, spacing: float = 0.25) -> Path:
    """Serpentine: straights joined by alternating 180 degree turns."""
    pts = [np.array([[0.0, 0.0]])]
    x0, y = 0.0, 0.0
    heading = 1.0  # +x or -x
    for _ in range(turns):
        x1 = x0 + heading * straight
        pts.append(np.array([[x1, y]]))
        cy = y + radius
        if heading > 0:
            arc = _arc((x1, cy), radius, -math.pi / 2, math.pi / 2, 40)
        else:
            arc = _arc((x1, cy), radius, -math.pi / 2, -3 * math.pi / 2, 40)
        pts.append(arc[1:])
        y += 2 * radius
        x0, heading = x1, -heading
    pts.append(np.array([[x0 + heading * straight, y]]))
    return Path(resample_polyline(np.concatenate(pts), spacing))


def shallow_path(straight: float = 20.0, bend_deg: float = 45.0, radius: float = 5.0,
                 spacing: float = 0.25) -> Path:
    """Straight, a left bend, straight, a right bend back, straight."""
    b = math.radians(bend_deg)
    pts = [np.array([[0.0, 0.0], [straight, 0.0]])]
    c = (straight, radius)
    arc1 = _arc(c, radius, -math.pi / 2, -math.pi / 2 + b, 20)
    pts.append(arc1[1:])
    end = arc1[-1]
    d = np.array([math.cos(b), math.sin(b)])
    p2 = end + straight * d
    pts.append(p2[None])
    # right bend: centre on the right of travel
    c2 = p2 + radius * np.array([math.sin(b), -math.cos(b)])
    a0 = math.atan2(p2[1] - c2[1], p2[0] - c2[0])
    arc2 = _arc(c2, radius, a0, a0 - b, 20)
    pts.append(arc2[1:])
    pts.append((arc2[-1] + np.array([straight, 0.0]))[None])
    return Path(resample_polyline(np.concatenate(pts), spacing))


__all__ = [
    "Scenario", "PROTOCOLS", "ISOLATED_ARMS", "IN_LOOP_ARMS", "MODELS", "DEFAULT_SWEEPS",
    "tight_path", "shallow_path", "scenario_mapping",
]
