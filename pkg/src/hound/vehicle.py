"""Shared vehicle types, frame conventions and kinematic helpers.

Frames
------
World is Z-up and right-handed. The body frame is x forward, y left,
z up. Positive steering turns left (positive yaw rate at positive speed).

Attitude is a yaw-pitch-roll triple ``(roll, pitch, yaw)``. Pitch is
negative when the nose points uphill. Roll is positive when the
right-hand wheels sit higher than the left-hand ones; with that sign
gravity contributes ``+g*sin(roll)`` along body +y and ``+g*sin(pitch)``
along body +x, i.e. both gravity terms push the car downhill.

Body accelerations are stored as specific force (what an accelerometer
reads): ``A_z`` is close to ``+g`` at rest on level ground.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path as FsPath

import numpy as np

from hound import config

GRAVITY = 9.81
GIMBAL_GUARD = math.pi / 2 - 1e-3


class GimbalLockError(ValueError):
    """Pitch too close to +-90 degrees for the Euler-rate transform."""


@dataclass(frozen=True)
class VehicleParams:
    """Geometry, inertia and actuation limits of the car.

    The defaults describe the 1/10th scale car: about 4 kg, a 0.246 m
    wheelbase, and a centre of mass high enough that the static rollover
    limit ``track / (2 * com_height)`` comes out near 0.9.
    """

    mass_kg: float = 4.0
    wheelbase_m: float = 0.246
    com_to_front_m: float = 0.123
    com_to_rear_m: float = 0.123
    track_width_m: float = 0.25
    com_height_m: float = 0.139
    yaw_inertia_kgm2: float = 0.10
    roll_inertia_kgm2: float = 0.03
    steering_max_rad: float = 0.38
    steering_rate_rad_s: float = 5.2
    wheelspeed_max_m_s: float = 23.0
    gravity_m_s2: float = GRAVITY

    def __post_init__(self):
        positive = (
            "mass_kg", "wheelbase_m", "com_to_front_m", "com_to_rear_m",
            "track_width_m", "com_height_m", "yaw_inertia_kgm2",
            "roll_inertia_kgm2", "steering_rate_rad_s", "wheelspeed_max_m_s",
            "gravity_m_s2",
        )
        for name in positive:
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be finite and > 0, got {value}")
        if abs(self.com_to_front_m + self.com_to_rear_m - self.wheelbase_m) > 1e-9:
            raise ValueError("com_to_front_m + com_to_rear_m must equal wheelbase_m")
        if not 0 < self.steering_max_rad < math.pi / 2:
            raise ValueError("steering_max_rad must lie in (0, pi/2)")

    @property
    def rollover_limit(self) -> float:
        """Static rollover index limit ``L_t / (2 H_com)``."""
        return self.track_width_m / (2.0 * self.com_height_m)

    def scaled(self, length: float, mass: float, inertia: float) -> VehicleParams:
        return replace(
            self,
            mass_kg=self.mass_kg * mass,
            wheelbase_m=self.wheelbase_m * length,
            com_to_front_m=self.com_to_front_m * length,
            com_to_rear_m=self.com_to_rear_m * length,
            track_width_m=self.track_width_m * length,
            com_height_m=self.com_height_m * length,
            yaw_inertia_kgm2=self.yaw_inertia_kgm2 * inertia,
            roll_inertia_kgm2=self.roll_inertia_kgm2 * inertia,
        )

    def save(self, path: str | FsPath) -> None:
        config.dump_dataclass(self, path)

    @classmethod
    def load(cls, path: str | FsPath) -> VehicleParams:
        return config.load_dataclass(cls, path)


def small_car() -> VehicleParams:
    return VehicleParams()


def big_car() -> VehicleParams:
    # lengths x2, mass x8, inertias x32 (mass x length^2)
    return VehicleParams().scaled(length=2.0, mass=8.0, inertia=32.0)


@dataclass(frozen=True)
class ControlCommand:
    """Steering angle (rad, positive left) and wheel-speed target (m/s)."""

    steering_rad: float = 0.0
    wheelspeed_m_s: float = 0.0

    def clipped(self, params: VehicleParams, speed_limit: float | None = None) -> ControlCommand:
        vmax = params.wheelspeed_max_m_s if speed_limit is None else min(speed_limit, params.wheelspeed_max_m_s)
        return ControlCommand(
            float(np.clip(self.steering_rad, -params.steering_max_rad, params.steering_max_rad)),
            float(np.clip(self.wheelspeed_m_s, 0.0, max(vmax, 0.0))),
        )

    def is_valid(self, params: VehicleParams) -> bool:
        return (
            abs(self.steering_rad) <= params.steering_max_rad + 1e-12
            and 0.0 <= self.wheelspeed_m_s <= params.wheelspeed_max_m_s
        )


def wrap_angle(x):
    """Wrap angles to (-pi, pi]. Works on scalars and arrays."""
    y = np.mod(np.asarray(x, dtype=float) + math.pi, 2 * math.pi) - math.pi
    y = np.where(y <= -math.pi, y + 2 * math.pi, y)
    return float(y) if np.ndim(y) == 0 else y


def tilt_from_rpy(rpy) -> float | np.ndarray:
    """Angle between the body z axis and world z: ``arccos(cos(roll) cos(pitch))``."""
    roll, pitch = np.asarray(rpy, dtype=float)[..., 0], np.asarray(rpy, dtype=float)[..., 1]
    c = np.clip(np.cos(roll) * np.cos(pitch), -1.0, 1.0)
    beta = np.arccos(c)
    return float(beta) if np.ndim(beta) == 0 else beta


def tilt(roll, pitch):
    """Array-friendly form of :func:`tilt_from_rpy` taking roll and pitch separately."""
    return np.arccos(np.minimum(np.maximum(np.cos(roll) * np.cos(pitch), -1.0), 1.0))


def _guard(pitch) -> None:
    if np.any(np.abs(pitch) >= GIMBAL_GUARD):
        raise GimbalLockError(f"|pitch| must stay below {GIMBAL_GUARD:.6f} rad")


def euler_rates_to_body_rates(rpy, rpy_rates) -> np.ndarray:
    """Map yaw-pitch-roll angle rates to body angular rates.

    Args:
        rpy: ``(..., 3)`` roll, pitch, yaw in radians.
        rpy_rates: ``(..., 3)`` time derivatives of the same angles.

    Returns:
        ``(..., 3)`` body rates ``(w_x, w_y, w_z)``.

    Raises:
        GimbalLockError: if ``|pitch|`` is within 1e-3 rad of pi/2.
    """
    rpy = np.asarray(rpy, dtype=float)
    rates = np.asarray(rpy_rates, dtype=float)
    roll, pitch = rpy[..., 0], rpy[..., 1]
    _guard(pitch)
    droll, dpitch, dyaw = rates[..., 0], rates[..., 1], rates[..., 2]
    sr, cr = np.sin(roll), np.cos(roll)
    sp, cp = np.sin(pitch), np.cos(pitch)
    wx = droll - sp * dyaw
    wy = cr * dpitch + sr * cp * dyaw
    wz = -sr * dpitch + cr * cp * dyaw
    return np.stack([wx, wy, wz], axis=-1)


def body_rates_to_euler_rates(rpy, body_rates) -> np.ndarray:
    """Inverse of :func:`euler_rates_to_body_rates`."""
    rpy = np.asarray(rpy, dtype=float)
    w = np.asarray(body_rates, dtype=float)
    roll, pitch = rpy[..., 0], rpy[..., 1]
    _guard(pitch)
    wx, wy, wz = w[..., 0], w[..., 1], w[..., 2]
    sr, cr = np.sin(roll), np.cos(roll)
    tp, cp = np.tan(pitch), np.cos(pitch)
    droll = wx + sr * tp * wy + cr * tp * wz
    dpitch = cr * wy - sr * wz
    dyaw = (sr * wy + cr * wz) / cp
    return np.stack([droll, dpitch, dyaw], axis=-1)


@dataclass(frozen=True)
class RigidState:
    """Full controller state.

    ``tilt_rad`` is derived from roll and pitch so the two can never
    disagree.
    """

    position_world_m: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rpy_rad: tuple[float, float, float] = (0.0, 0.0, 0.0)
    vel_body_m_s: tuple[float, float, float] = (0.0, 0.0, 0.0)
    acc_body_m_s2: tuple[float, float, float] = (0.0, 0.0, GRAVITY)
    rates_body_rad_s: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        wrapped = tuple(float(wrap_angle(a)) for a in self.rpy_rad)
        object.__setattr__(self, "rpy_rad", wrapped)

    @property
    def tilt_rad(self) -> float:
        return tilt_from_rpy(self.rpy_rad)

    @property
    def speed(self) -> float:
        return math.hypot(self.vel_body_m_s[0], self.vel_body_m_s[1])


class Path:
    """Ordered 2D waypoints with cumulative arc length.

    Projection helpers are vectorised over query points, since the MPPI
    cost evaluates thousands of positions per planning cycle.
    """

    def __init__(self, waypoints):
        pts = np.asarray(waypoints, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("a path needs at least two 2D waypoints")
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len <= 1e-6):
            raise ValueError("consecutive waypoints must be more than 1e-6 m apart")
        self.waypoints = pts
        self.segment_lengths = seg_len
        self.arc_length = np.concatenate([[0.0], np.cumsum(seg_len)])
        self._seg = seg
        self._dir = seg / seg_len[:, None]

    @property
    def length(self) -> float:
        return float(self.arc_length[-1])

    @property
    def goal(self) -> np.ndarray:
        return self.waypoints[-1]

    def project(self, points):
        """Project points onto the polyline.

        Returns:
            ``(foot, cross_track, s, heading)``: the nearest point on the
            path, the perpendicular distance to it, the arc length at the
            foot point, and the path tangent heading there. Points past
            either end are clamped to the end waypoints.
        """
        p = np.atleast_2d(np.asarray(points, dtype=float))
        px, py = p[:, 0], p[:, 1]
        best = np.full(len(p), np.inf)
        idx = np.zeros(len(p), dtype=np.intp)
        best_t = np.zeros(len(p))
        # one pass per segment keeps memory at O(points); paths here are short
        for j in range(len(self.segment_lengths)):
            ax, ay = self.waypoints[j]
            sx, sy = self._seg[j]
            t = np.clip(((px - ax) * sx + (py - ay) * sy) / self.segment_lengths[j] ** 2, 0.0, 1.0)
            dx = px - (ax + t * sx)
            dy = py - (ay + t * sy)
            d2 = dx * dx + dy * dy
            closer = d2 < best
            best = np.where(closer, d2, best)
            idx = np.where(closer, j, idx)
            best_t = np.where(closer, t, best_t)
        foot_best = self.waypoints[idx] + best_t[:, None] * self._seg[idx]
        dist = np.sqrt(best)
        s = self.arc_length[idx] + best_t * self.segment_lengths[idx]
        d = self._dir[idx]
        heading = np.arctan2(d[:, 1], d[:, 0])
        return foot_best, dist, s, heading

    def save(self, path: str | FsPath) -> None:
        np.savetxt(path, self.waypoints, fmt="%.17g")

    @classmethod
    def load(cls, path: str | FsPath) -> Path:
        return cls(np.loadtxt(path, ndmin=2))


def resample_polyline(points, spacing: float) -> np.ndarray:
    """Resample a polyline at (approximately) uniform arc-length spacing."""
    pts = np.asarray(points, dtype=float)
    seg = np.hypot(*np.diff(pts, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    n = max(2, int(math.ceil(s[-1] / spacing)) + 1)
    q = np.linspace(0.0, s[-1], n)
    return np.stack([np.interp(q, s, pts[:, 0]), np.interp(q, s, pts[:, 1])], axis=1)


__all__ = [
    "GRAVITY", "GimbalLockError", "VehicleParams", "ControlCommand", "RigidState",
    "Path", "small_car", "big_car", "wrap_angle", "tilt", "tilt_from_rpy",
    "euler_rates_to_body_rates", "body_rates_to_euler_rates", "resample_polyline",
]
