"""Sampling-based planner over (steering, wheel speed) sequences.

Each cycle perturbs the nominal sequence with time-correlated noise,
rolls every sample through :func:`hound.dynamics.step_slip3d` on the
elevation map, scores the rollouts with hinge penalties on load,
tilt, speed and rollover index plus path-tracking terms, and replaces
the nominal with the exponentially weighted sample average.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np

from hound import config
from hound.dynamics import ModelState, TireParams, init_model_state, step_slip3d
from hound.terrain import ElevationMap
from hound.vehicle import ControlCommand, Path, RigidState, VehicleParams


class DegenerateWeightsError(RuntimeError):
    """Every sample had infinite cost."""


@dataclass(frozen=True)
class CostWeights:
    w_force: float = 0.1
    w_tilt: float = 10.0
    w_speed: float = 5.0
    w_rollover: float = 50.0
    w_cross: float = 2.0
    w_goal: float = 1.0
    force_limit_N: float = 3.0 * 4.0 * 9.81
    tilt_limit_rad: float = 0.35
    speed_limit_m_s: float = 5.0
    ri_limit: float = 0.25 / (2 * 0.139)

    def __post_init__(self):
        for name in ("w_force", "w_tilt", "w_speed", "w_rollover", "w_cross", "w_goal"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("force_limit_N", "tilt_limit_rad", "speed_limit_m_s", "ri_limit"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @classmethod
    def for_vehicle(cls, params: VehicleParams, speed_limit_m_s: float, **overrides) -> CostWeights:
        kw = dict(
            force_limit_N=3.0 * params.mass_kg * params.gravity_m_s2,
            speed_limit_m_s=speed_limit_m_s,
            ri_limit=params.rollover_limit,
        )
        kw.update(overrides)
        return cls(**kw)

    def save(self, path: str | FsPath) -> None:
        config.dump_dataclass(self, path)

    @classmethod
    def load(cls, path: str | FsPath) -> CostWeights:
        return config.load_dataclass(cls, path)


@dataclass(frozen=True)
class MppiConfig:
    horizon_steps: int = 50
    dt: float = 0.02
    num_samples: int = 512
    temperature: float = 5.0
    noise_std: tuple[float, float] = (0.05, 0.5)
    smoothing: float = 0.8
    seed: int = 0
    lookahead_m: float = 8.0

    def __post_init__(self):
        if self.horizon_steps < 1:
            raise ValueError("horizon_steps must be >= 1")
        if self.num_samples < 2:
            raise ValueError("num_samples must be >= 2")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if len(self.noise_std) != 2 or min(self.noise_std) < 0:
            raise ValueError("noise_std needs two non-negative entries")
        if not 0.0 <= self.smoothing < 1.0:
            raise ValueError("smoothing must lie in [0, 1)")
        if not 0.0 < self.dt <= 0.05:
            raise ValueError("dt must lie in (0, 0.05]")

    def save(self, path: str | FsPath) -> None:
        config.dump_dataclass(self, path)

    @classmethod
    def load(cls, path: str | FsPath) -> MppiConfig:
        return config.load_dataclass(cls, path)


def hinge(x, limit):
    return np.maximum(0.0, x - limit)


def _stack(states) -> dict[str, np.ndarray]:
    if isinstance(states, ModelState):
        states = [states]
    names = ("x", "y", "vx", "ay", "az", "fz", "roll", "pitch", "on_map")
    return {k: np.stack([np.asarray(getattr(s, k)) for s in states]) for k in names}


def trajectory_cost(states, u_seq, path: Path, w: CostWeights):
    """Summed hinge and tracking cost of a rollout.

    Args:
        states: the ``H`` states after each step, scalar or batched over
            samples (batched states give one cost per sample).
        u_seq: the controls that produced them (unused by the terms
            themselves, kept so the signature matches the planner's data).
        path: reference path.
        w: weights and limits.

    Returns:
        Scalar cost, or an ``(N,)`` array; rollouts that left the map get
        ``+inf``.
    """
    del u_seq
    st = _stack(states)
    beta = np.arccos(np.clip(np.cos(st["roll"]) * np.cos(st["pitch"]), -1.0, 1.0))
    ri = np.abs(st["ay"]) / np.maximum(st["az"], 0.5)
    pts = np.stack([st["x"].ravel(), st["y"].ravel()], axis=1)
    _, cross, s, _ = path.project(pts)
    cross = cross.reshape(st["x"].shape)
    remaining = (path.length - s).reshape(st["x"].shape) + cross
    per_step = (
        w.w_force * hinge(st["fz"], w.force_limit_N)
        + w.w_tilt * hinge(beta, w.tilt_limit_rad)
        + w.w_speed * hinge(st["vx"], w.speed_limit_m_s)
        + w.w_rollover * hinge(ri, w.ri_limit)
        + w.w_cross * cross
        + w.w_goal * remaining
    )
    total = per_step.sum(axis=0)
    total = np.where(np.all(st["on_map"], axis=0), total, np.inf)
    return float(total) if np.ndim(total) == 0 else total


def correlated_noise(rng: np.random.Generator, n: int, horizon: int, std, alpha: float) -> np.ndarray:
    """AR(1) noise with stationary per-step std ``std``: shape (n, horizon, 2)."""
    std = np.asarray(std, dtype=float)
    eps = rng.standard_normal((n, horizon, 2)) * std
    out = np.empty_like(eps)
    out[:, 0] = eps[:, 0]
    c = math.sqrt(1.0 - alpha * alpha)
    for t in range(1, horizon):
        out[:, t] = alpha * out[:, t - 1] + c * eps[:, t]
    return out


def sample_controls(nominal, cfg: MppiConfig, speed_limit: float, steering_max: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Perturb and clamp the nominal sequence; returns (N, H, 2)."""
    nominal = np.asarray(nominal, dtype=float)
    if nominal.shape != (cfg.horizon_steps, 2):
        raise ValueError(f"nominal must have shape ({cfg.horizon_steps}, 2)")
    noise = correlated_noise(rng, cfg.num_samples, cfg.horizon_steps, cfg.noise_std, cfg.smoothing)
    u = nominal[None] + noise
    u[..., 0] = np.clip(u[..., 0], -steering_max, steering_max)
    u[..., 1] = np.clip(u[..., 1], 0.0, max(speed_limit, 0.0))
    return u


def mppi_weights(costs, temperature: float) -> np.ndarray:
    c = np.asarray(costs, dtype=float)
    finite = np.isfinite(c)
    if not finite.any():
        raise DegenerateWeightsError("all samples have infinite cost")
    w = np.zeros_like(c)
    w[finite] = np.exp(-(c[finite] - c[finite].min()) / temperature)
    return w / w.sum()


def mppi_update(nominal, samples, costs, temperature: float) -> np.ndarray:
    """Exponentially weighted average of the samples (nominal only fixes the shape)."""
    samples = np.asarray(samples, dtype=float)
    if np.shape(nominal) != samples.shape[1:]:
        raise ValueError("samples do not match the nominal shape")
    w = mppi_weights(costs, temperature)
    return np.tensordot(w, samples, axes=1)


def shift(seq) -> np.ndarray:
    """Drop the first entry and repeat the last (receding horizon)."""
    seq = np.asarray(seq)
    return np.concatenate([seq[1:], seq[-1:]], axis=0)


@dataclass
class PlanDiagnostics:
    min_cost: float
    mean_cost: float
    effective_samples: float
    wall_time_s: float
    off_map: int


@dataclass
class Mppi:
    """Stateful planner: holds the nominal sequence, RNG, and last rollout."""

    params: VehicleParams
    tires: TireParams
    cfg: MppiConfig = field(default_factory=MppiConfig)
    weights: CostWeights | None = None

    def __post_init__(self):
        if self.weights is None:
            self.weights = CostWeights.for_vehicle(self.params, speed_limit_m_s=5.0)
        self.reset()

    def reset(self, speed: float = 0.0) -> None:
        self.rng = np.random.default_rng(self.cfg.seed)
        self.nominal = np.zeros((self.cfg.horizon_steps, 2))
        self.nominal[:, 1] = speed
        self.diagnostics: PlanDiagnostics | None = None
        self.last_samples: np.ndarray | None = None
        self.last_states: list[ModelState] | None = None
        self.last_costs: np.ndarray | None = None
        self.progress_s: float | None = None

    def _local_path(self, path: Path, x: float, y: float) -> tuple[Path, float]:
        """Window of the path ahead of the car; returns (window, arc offset)."""
        if self.progress_s is None:
            _, _, s, _ = path.project(np.array([[x, y]]))
            s0 = float(s[0])
        else:
            lo, _ = path_window_bounds(path, self.progress_s - 1.0, self.progress_s + 3.0)
            sub, off = path_window(path, *lo)
            _, _, s, _ = sub.project(np.array([[x, y]]))
            s0 = float(s[0]) + off
        self.progress_s = s0
        (a, b), _ = path_window_bounds(path, s0 - 1.0, s0 + self.cfg.lookahead_m)
        return path_window(path, a, b)

    def rollout(self, s0: ModelState, samples: np.ndarray, emap: ElevationMap) -> list[ModelState]:
        states = []
        s = s0
        for t in range(samples.shape[1]):
            s = step_slip3d(s, (samples[:, t, 0], samples[:, t, 1]), emap, self.params, self.tires,
                            self.cfg.dt, strict=False)
            states.append(s)
        return states

    def plan(self, state: RigidState | ModelState, emap: ElevationMap, path: Path,
             speed_limit: float) -> ControlCommand:
        """One planning cycle; returns the first command of the new nominal."""
        t0 = time.perf_counter()
        if isinstance(state, RigidState):
            x, y, _ = state.position_world_m
            vx, vy, _ = state.vel_body_m_s
            s0 = init_model_state(emap, self.params, x, y, state.rpy_rad[2], max(vx, 0.0), vy,
                                  state.rates_body_rad_s[2], strict=False)
        else:
            s0 = state
        n = self.cfg.num_samples
        s0 = s0.broadcast(n)
        local, offset = self._local_path(path, float(s0.x[0]), float(s0.y[0]))
        samples = sample_controls(self.nominal, self.cfg, speed_limit, self.params.steering_max_rad, self.rng)
        states = self.rollout(s0, samples, emap)
        costs = trajectory_cost(states, samples, _OffsetPath(local, offset, path.length), self.weights)
        new = mppi_update(self.nominal, samples, costs, self.cfg.temperature)
        w = mppi_weights(costs, self.cfg.temperature)
        cmd = ControlCommand(float(new[0, 0]), float(new[0, 1]))
        self.nominal = shift(new)
        self.last_samples, self.last_states, self.last_costs = samples, states, costs
        finite = costs[np.isfinite(costs)]
        self.diagnostics = PlanDiagnostics(
            float(finite.min()), float(finite.mean()), float(1.0 / np.sum(w * w)),
            time.perf_counter() - t0, int(np.sum(~np.isfinite(costs))),
        )
        return cmd


def path_window_bounds(path: Path, s_lo: float, s_hi: float):
    """Waypoint index range covering arc lengths [s_lo, s_hi]."""
    arc = path.arc_length
    a = int(np.clip(np.searchsorted(arc, s_lo, side="right") - 1, 0, len(arc) - 2))
    b = int(np.clip(np.searchsorted(arc, s_hi, side="left"), a + 1, len(arc) - 1))
    return (a, b), (arc[a], arc[b])


def path_window(path: Path, a: int, b: int) -> tuple[Path, float]:
    return Path(path.waypoints[a:b + 1]), float(path.arc_length[a])


class _OffsetPath:
    """A path window that reports arc length and remaining distance of the full path."""

    def __init__(self, local: Path, offset: float, total: float):
        self.local = local
        self.offset = offset
        self.length = total

    def project(self, points):
        foot, cross, s, heading = self.local.project(points)
        return foot, cross, s + self.offset, heading


__all__ = [
    "CostWeights", "MppiConfig", "Mppi", "PlanDiagnostics", "DegenerateWeightsError",
    "trajectory_cost", "sample_controls", "correlated_noise", "mppi_update", "mppi_weights",
    "shift", "hinge",
]
